"""Coarse-grained energies ``nu``, ``nu*`` and the matrices they define.

For a domain ``U`` inside the field box, with ``a = exp(tau)``,

    nu(U, p)  = min over v = hat(l_p) on the boundary of U of  E_U[v],
    nu*(U, q) = max over v of  (1/|U|) sum_{E(U)} (-a (grad v)^2 / 2 + q . grad v),

where ``E_U[v] = (1/|U|) sum_{E(U)} a (grad v)^2 / 2`` and ``hat`` replaces an
affine function on each cluster of extreme conductances by its mean over the
cluster boundary. Both are quadratic: ``nu = p.abar p / 2`` and
``nu* = q.abar_*^{-1} q / 2``.

The normalizer ``|U|`` is the edge volume ``|E(U)| / d`` by default, so that
``a = 1`` gives ``abar = abar_* = Id`` on every cube; ``volume='vertices'``
uses the vertex count instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .elliptic import (DEFAULT_TOL, ConductanceOperator, h_minus_one_norm_edges, solve_dirichlet,
                       solve_neumann_variational)
from .field import TauField, affine, hat_transform
from .lattice import (DomainError, LatticeBox, edge_lookup, enumerate_simplexes, triadic_children,
                      triadic_cube, vertex_lookup)
from .percolation import DEFAULT_THRESHOLD, decompose_clusters
from .stats import jackknife

VOLUMES = ("edges", "vertices")


class QuadraticityError(ArithmeticError):
    """Polarization data are inconsistent with a quadratic form."""


def volume_of(U: LatticeBox, volume: str = "edges") -> float:
    if volume == "edges":
        return len(U.edges()) / U.dim
    if volume == "vertices":
        return float(U.n_vertices)
    raise ValueError(f"unknown volume convention {volume!r}")


def axis_sums(U: LatticeBox, values: np.ndarray) -> np.ndarray:
    """Per-direction sums of an edge function on ``E(U)``."""
    e = U.edges()
    return np.bincount(e.axis, weights=values, minlength=U.dim)


class CoarseGrainer:
    """Per-sample solver for ``nu`` and ``nu*`` on sub-domains of the field box.

    The clusters (and hence the hat of each affine function) are computed
    once on the whole field box, so all sub-domains see the same boundary data.
    """

    def __init__(self, tau: TauField, t: float = DEFAULT_THRESHOLD, volume: str = "edges",
                 tol: float = DEFAULT_TOL, method: str = "direct"):
        if volume not in VOLUMES:
            raise ValueError(f"unknown volume convention {volume!r}")
        self.tau = tau
        self.t = t
        self.volume = volume
        self.tol = tol
        self.method = method
        self.d = tau.box.dim
        self.clusters = decompose_clusters(tau, t)
        basis = []
        for i in range(self.d):
            p = np.zeros(self.d)
            p[i] = 1.0
            basis.append(hat_transform(affine(tau.box, p), self.clusters))
        self.hat_basis = np.stack(basis, axis=1)  # (n_vertices, d)
        self._ops = {}

    # -- plumbing ------------------------------------------------------------------
    def _op(self, U: LatticeBox, mode: str) -> ConductanceOperator:
        key = (id(U), mode)
        hit = self._ops.get(key)
        if hit is None or hit[0] is not U:
            op = ConductanceOperator(U, self.tau.a[edge_lookup(self.tau.box, U)], mode)
            hit = (U, op)
            self._ops[key] = hit
        return hit[1]

    def hat(self, U: LatticeBox, p) -> np.ndarray:
        """``hat(l_p)`` restricted to ``U``."""
        return self.hat_basis[vertex_lookup(self.tau.box, U)] @ np.asarray(p, dtype=np.float64)

    def vol(self, U: LatticeBox) -> float:
        return volume_of(U, self.volume)

    # -- nu ---------------------------------------------------------------------------
    def nu_minimizer(self, U: LatticeBox, p) -> np.ndarray:
        op = self._op(U, "dirichlet")
        return solve_dirichlet(op, g=self.hat(U, p), tol=self.tol, method=self.method).solution

    def energy(self, U: LatticeBox, v) -> float:
        """``E_U[v]``."""
        return 0.5 * self._op(U, "dirichlet").energy(v) / self.vol(U)

    def nu(self, U: LatticeBox, p) -> float:
        return self.energy(U, self.nu_minimizer(U, p))

    # -- nu* --------------------------------------------------------------------------
    def nu_star_maximizer(self, U: LatticeBox, q) -> np.ndarray:
        op = self._op(U, "natural")
        return solve_neumann_variational(op, q, tol=self.tol, method=self.method).solution

    def nu_star_functional(self, U: LatticeBox, q, v) -> float:
        op = self._op(U, "natural")
        g = op.grad(v)
        qe = np.asarray(q, dtype=np.float64)[U.edges().axis]
        return float(np.sum(-0.5 * op.a * g * g + qe * g)) / self.vol(U)

    def nu_star(self, U: LatticeBox, q) -> float:
        return self.nu_star_functional(U, q, self.nu_star_maximizer(U, q))

    # -- matrices ---------------------------------------------------------------------
    def polarization_values(self, U: LatticeBox, which: str = "nu") -> dict:
        f = self.nu if which == "nu" else self.nu_star
        d = self.d
        vals = {}
        for i in range(d):
            for j in range(i, d):
                p = np.zeros(d)
                p[i] += 1.0
                p[j] += 1.0
                vals[(i, j)] = f(U, p) if i != j else f(U, p / 2.0)
        return vals

    def abar(self, U: LatticeBox) -> np.ndarray:
        return reconstruct_matrix(self.polarization_values(U, "nu"), self.d)

    def abar_star(self, U: LatticeBox) -> np.ndarray:
        """``abar_*(U)``, the inverse of the matrix of ``nu*``."""
        return np.linalg.inv(reconstruct_matrix(self.polarization_values(U, "nu_star"), self.d))

    def boundary_matrix(self, U: LatticeBox) -> np.ndarray:
        """``B_ij = (1/|U|) sum over axis-i edges of grad v(., U, e_j)``."""
        d = self.d
        op = self._op(U, "dirichlet")
        cols = []
        for j in range(d):
            p = np.zeros(d)
            p[j] = 1.0
            cols.append(axis_sums(U, op.grad(self.nu_minimizer(U, p))))
        return np.stack(cols, axis=1) / self.vol(U)


def reconstruct_matrix(values: dict, d: int, tol: float | None = None, checks: dict | None = None) -> np.ndarray:
    """Symmetric matrix of a quadratic form ``Q(p) = p.M p / 2`` by polarization.

    ``values[(i, i)] = Q(e_i)`` and ``values[(i, j)] = Q(e_i + e_j)`` for
    ``i < j``. Optional ``checks`` maps further vectors ``p`` to ``Q(p)``; if
    any differs from ``p.M p / 2`` by more than ``tol`` (relative to
    ``|M| |p|^2``), :class:`QuadraticityError` is raised.
    """
    M = np.zeros((d, d))
    for i in range(d):
        if (i, i) not in values:
            raise ValueError(f"missing diagonal evaluation ({i}, {i})")
        M[i, i] = 2.0 * values[(i, i)]
    for i in range(d):
        for j in range(i + 1, d):
            key = (i, j) if (i, j) in values else (j, i)
            if key not in values:
                raise ValueError(f"missing evaluation ({i}, {j})")
            M[i, j] = M[j, i] = values[key] - values[(i, i)] - values[(j, j)]
    if checks:
        scale = max(np.abs(M).max(), 1e-300)
        for p, v in checks.items():
            p = np.asarray(p, dtype=np.float64)
            r = abs(0.5 * p @ M @ p - v) / (scale * max(p @ p, 1e-300))
            if tol is not None and r > tol:
                raise QuadraticityError(f"polarization residual {r:.3e} at p={p.tolist()}")
    return M


def polarization_residuals(cg: CoarseGrainer, U: LatticeBox, rng: np.random.Generator,
                           n_checks: int = 3) -> dict:
    """Relative deviation of ``nu`` and ``nu*`` from their reconstructed quadratic forms.

    Checks ``Q(2 e_1) = 4 Q(e_1)``, ``Q(e_1 - e_2)`` and random directions.
    """
    d = cg.d
    out = {}
    for which, f in (("nu", cg.nu), ("nu_star", cg.nu_star)):
        vals = cg.polarization_values(U, which)
        M = reconstruct_matrix(vals, d)
        ps = [2.0 * np.eye(d)[0]]
        if d > 1:
            ps.append(np.eye(d)[0] - np.eye(d)[1])
        ps += list(rng.normal(size=(n_checks, d)))
        scale = np.abs(M).max()
        res = [abs(f(U, p) - 0.5 * p @ M @ p) / (scale * (p @ p)) for p in ps]
        sym = M - M.T
        out[which] = {"max_residual": float(max(res)), "asymmetry": float(np.abs(sym).max())}
    return out


# --- individual quantities ------------------------------------------------------

def compute_nu(tau: TauField, U: LatticeBox, p, t: float = DEFAULT_THRESHOLD, volume: str = "edges",
               cg: CoarseGrainer | None = None) -> float:
    """``nu(U, p)`` with boundary data ``hat(l_p)`` (clusters at threshold ``t``)."""
    cg = cg or CoarseGrainer(tau, t, volume)
    return cg.nu(U, p)


def compute_nu_star(tau: TauField, U: LatticeBox, q, volume: str = "edges",
                    cg: CoarseGrainer | None = None) -> float:
    """``nu*(U, q)`` (natural boundary, mean-zero maximizer)."""
    cg = cg or CoarseGrainer(tau, DEFAULT_THRESHOLD, volume)
    return cg.nu_star(U, q)


def fenchel_check(cg: CoarseGrainer, U: LatticeBox, p, q) -> dict:
    """``nu(U,p) + nu*(U,q) - q.B p`` with ``B`` the directly computed gradient averages.

    The right side is the value of the ``nu*`` functional at the ``nu``
    minimizer, so the residual is non-negative up to solver error.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    B = cg.boundary_matrix(U)
    lhs = cg.nu(U, p) + cg.nu_star(U, q)
    return {"lhs": lhs, "boundary_term": float(q @ B @ p), "pq": float(p @ q),
            "residual": float(lhs - q @ B @ p)}


def duality_epsilon(abar: np.ndarray, B: np.ndarray) -> float:
    """Smallest ``eps`` with ``(B^T)^{-1} abar B^{-1} <= (1 + eps) abar``.

    Since the Fenchel inequality gives ``abar_* <= (B^T)^{-1} abar B^{-1}``,
    this ``eps`` certifies ``abar_* <= (1 + eps) abar``.
    """
    w, V = np.linalg.eigh(abar)
    half = V @ np.diag(np.sqrt(w)) @ V.T
    ihalf = V @ np.diag(1.0 / np.sqrt(w)) @ V.T
    K = half @ np.linalg.inv(B) @ ihalf
    return float(np.linalg.norm(K, 2) ** 2 - 1.0)


# --- inequalities on a parent and its children ------------------------------------

@dataclass
class InequalityResiduals:
    subadditivity_nu: float  # nu(P,p) - sum_c w_c nu(c,p), expected <= 0
    superadditivity_nu_star_raw: float  # nu*(P,q) - sum_c w_c nu*(c,q)
    superadditivity_nu_star: float  # raw residual minus the duplicated face sums, expected <= 0
    energy_lower_bound: float  # (1/2) pbar.abar_* pbar - E_U[v], expected <= 0
    spatial_flux: float  # max |avg a grad u - q|
    spatial_gradient: float  # max |avg grad u - abar_*^{-1} q|
    weights: list = field(default_factory=list)


def check_inequalities(tau: TauField, parent: LatticeBox, children=None, p=None, q=None,
                       t: float = DEFAULT_THRESHOLD, cg: CoarseGrainer | None = None) -> InequalityResiduals:
    """Signed residuals of subadditivity, energy lower bound and spatial averages on ``parent``.

    ``children`` default to the closed triadic children of a closed cube;
    they share faces, so the parent's edges are covered and edges on the
    shared faces are counted by two children. Child weights are the ratios of
    child to parent volume.
    """
    cg = cg or CoarseGrainer(tau, t)
    d = cg.d
    children = triadic_children(parent) if children is None else list(children)
    p = np.eye(d)[0] if p is None else np.asarray(p, dtype=np.float64)
    q = np.eye(d)[0] if q is None else np.asarray(q, dtype=np.float64)
    vp = cg.vol(parent)
    w = [cg.vol(c) / vp for c in children]

    sub = cg.nu(parent, p) - sum(wc * cg.nu(c, p) for wc, c in zip(w, children))

    u = cg.nu_star_maximizer(parent, q)
    raw = cg.nu_star_functional(parent, q, u) - sum(wc * cg.nu_star(c, q) for wc, c in zip(w, children))
    # edges counted by more than one child: their contribution at u is subtracted
    pe = parent.edges()
    count = np.zeros(len(pe))
    for c in children:
        np.add.at(count, edge_lookup(parent, c), 1.0)
    op = cg._op(parent, "natural")
    g = op.grad(u)
    dens = -0.5 * op.a * g * g + q[pe.axis] * g
    extra = float(np.sum((count - 1.0) * dens)) / vp
    sup = raw + extra

    astar = cg.abar_star(parent)
    v = cg.nu_minimizer(parent, p)
    opd = cg._op(parent, "dirichlet")
    pbar = axis_sums(parent, opd.grad(v)) / vp
    elb = 0.5 * pbar @ astar @ pbar - cg.energy(parent, v)

    flux = axis_sums(parent, op.a * g) / vp
    grad_avg = axis_sums(parent, g) / vp
    sp_flux = float(np.abs(flux - q).max())
    sp_grad = float(np.abs(grad_avg - np.linalg.solve(astar, q)).max())
    return InequalityResiduals(float(sub), float(raw), float(sup), float(elb), sp_flux, sp_grad, w)


# --- scale sweeps -------------------------------------------------------------------

@dataclass
class CoarseGrainReport:
    sample: int
    scale: int
    abar: np.ndarray
    abar_star: np.ndarray
    nu_values: dict
    nu_star_values: dict
    boundary_matrix: np.ndarray
    epsilon: float
    ordering_margin: float  # min eigenvalue of (1+eps) abar - abar_*
    gap: float  # spectral norm of abar - abar_*
    threshold: float

    def rows(self):
        """Flat CSV rows: (sample, scale, quantity, basis, value)."""
        out = []
        for (i, j), v in sorted(self.nu_values.items()):
            out.append((self.sample, self.scale, "nu", f"{i}{j}", v))
        for (i, j), v in sorted(self.nu_star_values.items()):
            out.append((self.sample, self.scale, "nu_star", f"{i}{j}", v))
        d = self.abar.shape[0]
        for i in range(d):
            for j in range(d):
                out.append((self.sample, self.scale, "abar", f"{i}{j}", self.abar[i, j]))
                out.append((self.sample, self.scale, "abar_star", f"{i}{j}", self.abar_star[i, j]))
        out.append((self.sample, self.scale, "epsilon", "", self.epsilon))
        out.append((self.sample, self.scale, "ordering_margin", "", self.ordering_margin))
        out.append((self.sample, self.scale, "gap", "", self.gap))
        return out


def scale_report(cg: CoarseGrainer, n: int, sample: int = 0) -> CoarseGrainReport:
    """Matrices and duality diagnostics on the closed cube of scale ``n`` at the origin."""
    U = triadic_cube(n, cg.d)
    if not cg.tau.box.sub_box(U):
        raise DomainError(f"cube of scale {n} does not fit in the field box")
    nv = cg.polarization_values(U, "nu")
    ns = cg.polarization_values(U, "nu_star")
    A = reconstruct_matrix(nv, cg.d)
    As = np.linalg.inv(reconstruct_matrix(ns, cg.d))
    B = cg.boundary_matrix(U)
    eps = duality_epsilon(A, B)
    margin = float(np.linalg.eigvalsh((1 + eps) * A - As).min())
    gap = float(np.linalg.norm(A - As, 2))
    return CoarseGrainReport(sample, n, A, As, nv, ns, B, eps, margin, gap, cg.t)


def scale_sweep(samples, n_max: int, t: float = DEFAULT_THRESHOLD, n_min: int = 1,
                volume: str = "edges") -> list[CoarseGrainReport]:
    """Per sample and per scale ``n_min..n_max`` coarse-grained matrices."""
    reports = []
    for k, tau in enumerate(samples):
        if not tau.box.sub_box(triadic_cube(n_max + 1, tau.box.dim)):
            raise DomainError(f"field box must contain the cube of scale {n_max + 1}")
        cg = CoarseGrainer(tau, t, volume)
        for n in range(n_min, n_max + 1):
            reports.append(scale_report(cg, n, k))
    return reports


def summarize_sweep(reports: list[CoarseGrainReport]) -> dict:
    """Per-scale means and standard errors of the matrix entries and the gap."""
    out = {}
    for n in sorted({r.scale for r in reports}):
        rs = [r for r in reports if r.scale == n]
        A = np.stack([r.abar for r in rs])
        As = np.stack([r.abar_star for r in rs])
        gap = np.array([r.gap for r in rs])
        d = A.shape[1]
        entry = {"n_samples": len(rs)}
        for name, arr in (("abar", A), ("abar_star", As)):
            entry[name] = arr.mean(axis=0).tolist()
            se = arr.std(axis=0, ddof=1) / math.sqrt(len(rs)) if len(rs) > 1 else np.zeros((d, d))
            entry[name + "_se"] = se.tolist()
        g = jackknife(gap) if len(rs) > 1 else None
        entry["gap"] = float(gap.mean())
        entry["gap_se"] = g.sigma if g else 0.0
        entry["min_eig_abar"] = float(min(np.linalg.eigvalsh(r.abar).min() for r in rs))
        entry["min_eig_abar_star"] = float(min(np.linalg.eigvalsh(r.abar_star).min() for r in rs))
        entry["max_ordering_violation"] = float(max(-r.ordering_margin for r in rs))
        out[n] = entry
    return out


# --- correctors and simplexes ------------------------------------------------------

def corrector_flatness(tau: TauField, scales, p, t: float = DEFAULT_THRESHOLD,
                       cg: CoarseGrainer | None = None) -> dict:
    """``3^{-(n+1)} || grad u(., cube_n, abar_*(cube_n) p) - grad hat(l_p) ||_{H^-1}`` per scale.

    The edge field is measured component-wise in the volume-normalized dual
    norm of the cube.
    """
    cg = cg or CoarseGrainer(tau, t)
    p = np.asarray(p, dtype=np.float64)
    out = {}
    for n in scales:
        U = triadic_cube(n, cg.d)
        q = cg.abar_star(U) @ p
        u = cg.nu_star_maximizer(U, q)
        op = cg._op(U, "natural")
        diff = op.grad(u) - op.grad(cg.hat(U, p))
        out[n] = 3.0 ** (-(n + 1)) * h_minus_one_norm_edges(diff, U)
    return out


def simplex_values(tau: TauField, n: int, p, t: float = DEFAULT_THRESHOLD, z=None,
                   cg: CoarseGrainer | None = None) -> dict:
    """``nu`` on the adapted simplexes of the half-open cube ``z + [0, 3^n)^d`` and on the cube itself."""
    cg = cg or CoarseGrainer(tau, t)
    d = cg.d
    if z is None:
        z = tuple([-(3 ** n - 1) // 2] * d)
    cube_ = triadic_cube(n, d, z, convention="half-open")
    simp = enumerate_simplexes(n, d, z)
    return {"cube": cg.nu(cube_, p), "simplexes": [cg.nu(s, p) for s in simp]}


def scalar_abar_bracket(samples, n: int | None = None, t: float = DEFAULT_THRESHOLD,
                        volume: str = "edges", max_samples: int = 20) -> dict:
    """Scalar homogenized coefficient from the two-sided bracket ``tr abar_*(cube_n)/d <= . <= tr abar(cube_n)/d``.

    ``n`` defaults to the largest closed cube whose scale-``n+1`` parent fits.
    The estimate is the midpoint of the sample-averaged bracket.
    """
    samples = list(samples)[:max_samples]
    box = samples[0].box
    d = box.dim
    if n is None:
        n = 1
        while box.sub_box(triadic_cube(n + 2, d)):
            n += 1
    U = triadic_cube(n, d)
    lo, hi = [], []
    for tau in samples:
        cg = CoarseGrainer(tau, t, volume)
        hi.append(np.trace(cg.abar(U)) / d)
        lo.append(np.trace(cg.abar_star(U)) / d)
    lower, upper = float(np.mean(lo)), float(np.mean(hi))
    return {"scale": n, "lower": lower, "upper": upper, "estimate": 0.5 * (lower + upper),
            "n_samples": len(samples)}
