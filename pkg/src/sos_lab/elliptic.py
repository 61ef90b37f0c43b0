"""Conductance Laplacians ``-div(a grad)`` on lattice domains and their solves.

Sign convention: ``div f(x) = sum_i f(x, x+e_i) - f(x-e_i, x)``, so that
``div(a grad u) = -L u`` with ``L = B^T diag(a) B`` positive semi-definite.
"""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .field import TauField
from .lattice import LatticeBox, edge_lookup, triadic_cube

DEFAULT_TOL = 1e-10


class SolverError(RuntimeError):
    def __init__(self, message: str, residual_history=()):
        super().__init__(message)
        self.residual_history = list(residual_history)


@dataclass
class SolveReport:
    solution: np.ndarray
    relative_residual: float
    iterations: int
    wall_time: float
    method: str = "cg"
    residual_history: list = field(default_factory=list, repr=False)

    def to_json(self) -> str:
        d = asdict(self)
        d["solution"] = self.solution.tolist()
        return json.dumps(d)


def incidence(box: LatticeBox) -> sp.csr_matrix:
    """Signed edge-vertex incidence ``B`` with ``(B v)(e) = v(head) - v(tail)`` (cached per box)."""
    cached = box.__dict__.get("_incidence")
    if cached is None:
        e = box.edges()
        m = len(e)
        rows = np.repeat(np.arange(m), 2)
        cols = np.column_stack([e.tail, e.head]).ravel()
        vals = np.tile([-1.0, 1.0], m)
        cached = sp.csr_matrix((vals, (rows, cols)), shape=(m, box.n_vertices))
        object.__setattr__(box, "_incidence", cached)
    return cached


class _BlockAssembler:
    """Maps edge conductances to the CSC data of the interior block of ``B^T diag(a) B``."""

    def __init__(self, box: LatticeBox, interior: np.ndarray):
        e = box.edges()
        n = box.n_vertices
        local = np.full(n, -1, dtype=np.int64)
        local[interior] = np.arange(len(interior))
        t, h = local[e.tail], local[e.head]
        eid = np.arange(len(e))
        rows = np.concatenate([t, h, t, h])
        cols = np.concatenate([t, h, h, t])
        sign = np.concatenate([np.ones(2 * len(e)), -np.ones(2 * len(e))])
        edge = np.concatenate([eid, eid, eid, eid])
        ok = (rows >= 0) & (cols >= 0)
        rows, cols, sign, edge = rows[ok], cols[ok], sign[ok], edge[ok]
        k = len(interior)
        lin = cols * k + rows
        uniq, inv = np.unique(lin, return_inverse=True)
        self.indices = (uniq % k).astype(np.int32)
        self.indptr = np.searchsorted(uniq // k, np.arange(k + 1)).astype(np.int32)
        self.P = sp.csr_matrix((sign, (inv, edge)), shape=(len(uniq), len(e)))
        self.shape = (k, k)

    def assemble(self, a: np.ndarray) -> sp.csc_matrix:
        return sp.csc_matrix((self.P @ a, self.indices.copy(), self.indptr.copy()), shape=self.shape)


def _assembler(box: LatticeBox, interior: np.ndarray) -> _BlockAssembler:
    cache = box.__dict__.get("_assemblers")
    if cache is None:
        cache = {}
        object.__setattr__(box, "_assemblers", cache)
    key = interior.tobytes()
    if key not in cache:
        cache[key] = _BlockAssembler(box, interior)
    return cache[key]


class ConductanceOperator:
    """``(v, D v) = sum_e a(e) (grad v(e))^2`` on a vertex set.

    ``mode='dirichlet'`` pins the boundary vertices (values supplied at solve
    time); ``mode='natural'`` leaves all vertices free.
    """

    def __init__(self, box: LatticeBox, a, mode: str = "dirichlet", boundary=None):
        if mode not in ("dirichlet", "natural"):
            raise ValueError(f"unknown boundary mode {mode!r}")
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (len(box.edges()),):
            raise ValueError("conductance array does not match the edges of the box")
        if np.any(~(a > 0)) or not np.all(np.isfinite(a)):
            raise ValueError("conductances must be finite and positive")
        self.box = box
        self.a = a
        self.mode = mode
        self.B = incidence(box)
        if mode == "dirichlet":
            bnd = box.boundary_mask() if boundary is None else np.asarray(boundary, dtype=bool)
        else:
            bnd = np.zeros(box.n_vertices, dtype=bool)
        self.boundary = bnd
        self.interior = np.flatnonzero(~bnd)
        self.bnd_idx = np.flatnonzero(bnd)
        self._lu = None
        self._L = None
        self._LII = None

    @property
    def L(self) -> sp.csr_matrix:
        """Full ``B^T diag(a) B`` on all vertices."""
        if self._L is None:
            self._L = (self.B.T @ sp.diags(self.a) @ self.B).tocsr()
        return self._L

    @classmethod
    def from_tau(cls, tau: TauField, U: LatticeBox | None = None, mode: str = "dirichlet",
                 boundary=None) -> "ConductanceOperator":
        """Operator on ``U`` (default: the field box) with ``a = exp(tau)`` restricted to ``E(U)``."""
        if U is None or U is tau.box:
            return cls(tau.box, tau.a, mode, boundary)
        return cls(U, tau.a[edge_lookup(tau.box, U)], mode, boundary)

    @classmethod
    def unit(cls, box: LatticeBox, mode: str = "dirichlet") -> "ConductanceOperator":
        return cls(box, np.ones(len(box.edges())), mode)

    @property
    def n_edges(self) -> int:
        return len(self.a)

    def grad(self, v) -> np.ndarray:
        return self.B @ np.asarray(v, dtype=np.float64)

    def form(self, v, w) -> float:
        return float(np.dot(self.a * self.grad(v), self.grad(w)))

    def energy(self, v) -> float:
        g = self.grad(v)
        return float(np.dot(self.a * g, g))

    def interior_matrix(self) -> sp.csc_matrix:
        if self._LII is None:
            self._LII = _assembler(self.box, self.interior).assemble(self.a)
        return self._LII

    def factor(self):
        """Sparse LU of the interior block (cached)."""
        if self._lu is None:
            try:
                self._lu = spla.splu(self.interior_matrix(), permc_spec="MMD_AT_PLUS_A")
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        return self._lu


def _preconditioner(A, kind: str):
    if kind == "jacobi":
        dinv = 1.0 / A.diagonal()
        return lambda r: dinv * r
    if kind == "ilu":
        ilu = spla.spilu(A.tocsc(), drop_tol=1e-4, fill_factor=10)
        return ilu.solve
    raise ValueError(f"unknown preconditioner {kind!r}")


def pcg(A, b, tol: float = DEFAULT_TOL, maxiter: int | None = None, x0=None,
        precond: str = "jacobi"):
    """Preconditioned conjugate gradients; returns ``(x, history)``.

    ``precond`` is ``'jacobi'`` (default) or ``'ilu'`` (incomplete LU).
    ``history`` holds the relative residual after each iteration. Raises
    :class:`SolverError` if ``tol`` is not reached within ``maxiter``.
    """
    n = len(b)
    maxiter = maxiter or max(10 * n, 1000)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), [0.0]
    M = _preconditioner(A, precond)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A @ x
    z = M(r)
    p = z.copy()
    rz = np.dot(r, z)
    history = [np.linalg.norm(r) / bnorm]
    for _ in range(maxiter):
        if history[-1] <= tol:
            return x, history
        Ap = A @ p
        alpha = rz / np.dot(p, Ap)
        x += alpha * p
        r -= alpha * Ap
        history.append(np.linalg.norm(r) / bnorm)
        z = M(r)
        rz_new = np.dot(r, z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    if history[-1] <= tol:
        return x, history
    raise SolverError(f"CG did not reach tol={tol} in {maxiter} iterations "
                      f"(residual {history[-1]:.3e})", history)


def _solve_spd(A, b, tol, method, maxiter=None):
    if method == "direct":
        lu = spla.splu(A.tocsc(), permc_spec="MMD_AT_PLUS_A")
        x = lu.solve(b)
        history = []
    elif method in ("cg", "cg-ilu"):
        x, history = pcg(A, b, tol, maxiter, precond="ilu" if method == "cg-ilu" else "jacobi")
    else:
        raise ValueError(f"unknown method {method!r}")
    bnorm = np.linalg.norm(b)
    rel = float(np.linalg.norm(b - A @ x) / bnorm) if bnorm > 0 else 0.0
    return x, rel, history


def solve_dirichlet(op: ConductanceOperator, rhs=None, g=None, tol: float = DEFAULT_TOL,
                    method: str = "cg", maxiter: int | None = None) -> SolveReport:
    """Solve ``div(a grad u) = rhs`` in the interior, ``u = g`` on the boundary."""
    if op.mode != "dirichlet":
        raise ValueError("solve_dirichlet needs a dirichlet-mode operator")
    t0 = time.perf_counter()
    n = op.box.n_vertices
    rhs = np.zeros(n) if rhs is None else np.asarray(rhs, dtype=np.float64)
    g = np.zeros(n) if g is None else np.asarray(g, dtype=np.float64)
    u = np.zeros(n)
    u[op.bnd_idx] = g[op.bnd_idx]
    I = op.interior
    if len(I):
        b = -rhs[I]
        if np.any(g[op.bnd_idx] != 0):
            b = b - op.L[I][:, op.bnd_idx] @ g[op.bnd_idx]
        if method == "direct":
            x = op.factor().solve(b)
            history = []
            A = op.interior_matrix()
            bn = np.linalg.norm(b)
            rel = float(np.linalg.norm(b - A @ x) / bn) if bn > 0 else 0.0
        else:
            x, rel, history = _solve_spd(op.interior_matrix().tocsr(), b, tol, method, maxiter)
        u[I] = x
    else:
        rel, history = 0.0, []
    return SolveReport(u, rel, max(len(history) - 1, 0), time.perf_counter() - t0, method, history)


def solve_neumann_variational(op: ConductanceOperator, q, tol: float = DEFAULT_TOL,
                              method: str = "cg", maxiter: int | None = None) -> SolveReport:
    """Maximizer of ``sum_e (-1/2 a (grad v)^2 + q . grad v)`` with mean-zero vertex values.

    The Euler-Lagrange equation is ``L u = B^T q_e`` with ``q_e = q[axis(e)]``.
    """
    t0 = time.perf_counter()
    q = np.asarray(q, dtype=np.float64)
    qe = q[op.box.edges().axis]
    b = op.B.T @ qe
    n = op.box.n_vertices
    if np.linalg.norm(b) == 0.0:
        return SolveReport(np.zeros(n), 0.0, 0, time.perf_counter() - t0, method, [0.0])
    if method == "direct":
        keep = np.arange(1, n)
        A = op.L[keep][:, keep].tocsc()
        u = np.zeros(n)
        u[keep] = spla.splu(A, permc_spec="MMD_AT_PLUS_A").solve(b[keep])
        history = []
    else:
        u, history = pcg(op.L, b, tol, maxiter)
    u -= u.mean()
    rel = float(np.linalg.norm(b - op.L @ u) / np.linalg.norm(b))
    return SolveReport(u, rel, max(len(history) - 1, 0), time.perf_counter() - t0, method, history)


def log_det(op: ConductanceOperator) -> float:
    """``log det`` of the interior block (``D_L(tau)`` with wired boundary)."""
    if op.mode != "dirichlet":
        raise ValueError("log_det needs a dirichlet-mode operator")
    if len(op.interior) == 0:
        return 0.0
    lu = op.factor()
    diag = lu.U.diagonal()
    if np.any(diag == 0):
        raise SolverError("singular matrix in log_det")
    if np.prod(np.sign(diag)) < 0:
        raise SolverError("matrix is not positive definite")
    return float(np.sum(np.log(np.abs(diag))))


def h_minus_one_norm(g, cube: LatticeBox, tol: float = DEFAULT_TOL) -> float:
    """Volume-normalized dual norm of ``g`` against ``H^1_0(cube)``.

    Solves ``-Laplacian w = g`` with zero boundary values and returns
    ``(|cube|^{-1} sum_e (grad w)^2)^{1/2}``.
    """
    g = np.asarray(g, dtype=np.float64)
    if g.shape != (cube.n_vertices,):
        raise ValueError("g must be a vertex function on the cube")
    op = ConductanceOperator.unit(cube)
    rep = solve_dirichlet(op, rhs=-g, tol=tol, method="direct")
    return float(np.sqrt(op.energy(rep.solution) / cube.n_vertices))


def h_minus_one_norm_edges(values, cube: LatticeBox, tol: float = DEFAULT_TOL) -> float:
    """Component-wise dual norm of an edge field: each axis is moved to its base vertices."""
    e = cube.edges()
    values = np.asarray(values, dtype=np.float64)
    total = 0.0
    for i in range(cube.dim):
        gi = np.zeros(cube.n_vertices)
        sel = e.axis == i
        gi[e.tail[sel]] = values[sel]
        total += h_minus_one_norm(gi, cube, tol) ** 2
    return float(np.sqrt(total))


def subcube_means(u, cube: LatticeBox, n: int) -> np.ndarray:
    """Means of ``u`` over the half-open subcubes of side ``3^n`` partitioning ``cube``."""
    s = 3 ** n
    grid = np.asarray(u, dtype=np.float64).reshape(cube.shape)
    d = cube.dim
    k = cube.shape[0] // s
    shape = []
    for _ in range(d):
        shape += [k, s]
    blocks = grid.reshape(shape)
    return blocks.mean(axis=tuple(range(1, 2 * d, 2))).ravel()


def multiscale_poincare_check(u, cube: LatticeBox) -> dict:
    """Ratio of ``||u||_{H^-1(cube)}`` to the multiscale average bound.

    ``cube`` is a half-open triadic cube of scale ``m``; the bound is
    ``3^m |(u)_cube| + sum_{n<m} 3^n (mean over subcubes of (u)_{sub}^2)^{1/2}``.
    """
    if cube.kind != "triadic" or cube.convention != "half-open" or cube.scale is None:
        raise ValueError("multiscale_poincare_check needs a half-open triadic cube")
    m = cube.scale
    u = np.asarray(u, dtype=np.float64)
    lhs = h_minus_one_norm(u, cube)
    terms = [3.0 ** m * abs(float(u.mean()))]
    for n in range(m):
        means = subcube_means(u, cube, n)
        terms.append(3.0 ** n * float(np.sqrt(np.mean(means ** 2))))
    rhs = float(sum(terms))
    if rhs == 0.0:
        ratio = 0.0 if lhs == 0.0 else float("inf")
    else:
        ratio = lhs / rhs
    return {"scale": m, "lhs": lhs, "rhs": rhs, "ratio": ratio, "terms": terms}


def centered_half_open_cube(m: int, d: int = 2) -> LatticeBox:
    c = (3 ** m - 1) // 2
    return triadic_cube(m, d, (-c,) * d, convention="half-open")
