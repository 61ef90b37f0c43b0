"""Variance of linear statistics of the gradient field, by three routes.

For a test field ``f`` and scale ``R``, ``F_R(phi) = R^{-d/2} sum_x f(x/R) . grad phi(x)``.
Given the conductances, ``phi`` is Gaussian, so

    Var[F_R] = < (f_R, grad u)_R >,   div(a grad u) = div f_R in Q_L, u = 0 on the boundary,

and at large ``R`` both approach the continuum value
``int int div f(x) G(x - y) div f(y) dx dy`` with ``G`` the Green function of
``-div(abar grad)``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import jv, roots_legendre

from .elliptic import ConductanceOperator, SolverError, solve_dirichlet
from .field import TauField, TestVectorField, divergence, evaluate_F_R
from .stats import Estimate, jackknife, require


@dataclass
class CltReport:
    R: float
    L: int
    delta: float
    n_samples: int
    var_direct: dict | None = None
    mean_direct: dict | None = None
    var_tau: dict | None = None
    var_gff: float | None = None
    a_bar: float | None = None
    wick: dict = field(default_factory=dict)
    bl_margins: dict = field(default_factory=dict)
    solver_failures: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _est(e: Estimate) -> dict:
    return e.to_dict()


def F_values(phi_samples, f: TestVectorField) -> np.ndarray:
    return np.array([evaluate_F_R(phi, f) for phi in phi_samples])


def variance_direct(phi_samples, f: TestVectorField, min_samples: int = 100) -> tuple[Estimate, Estimate]:
    """Sample variance of ``F_R`` (jackknife error) and the sample mean."""
    x = F_values(phi_samples, f)
    require(len(x), min_samples, "phi samples")
    return jackknife(x, lambda v: np.var(v, ddof=1)), jackknife(x)


def tau_route_value(tau: TauField, f: TestVectorField, method: str = "direct", tol: float = 1e-10) -> float:
    """``(f_R, grad u)_R`` for one conductance field."""
    box = tau.box
    f.check_support(box)
    fe = f.on_edges(box)
    op = ConductanceOperator.from_tau(tau)
    rep = solve_dirichlet(op, rhs=divergence(box, fe), tol=tol, method=method)
    d = box.dim
    return float(f.R ** (-d) * np.dot(fe, op.grad(rep.solution)))


def variance_tau_route(tau_samples, f: TestVectorField, min_samples: int = 100, method: str = "direct",
                       tol: float = 1e-10) -> tuple[Estimate, int]:
    """Average of ``(f_R, grad u)_R`` over conductance samples.

    Returns the estimate and the number of solver failures; a failed sample
    makes the whole estimate fail rather than being dropped.
    """
    vals, failures = [], 0
    for tau in tau_samples:
        try:
            vals.append(tau_route_value(tau, f, method, tol))
        except SolverError:
            failures += 1
    require(len(vals) + failures, min_samples, "tau samples")
    if failures:
        raise SolverError(f"{failures} of {len(vals) + failures} tau-route solves failed")
    return jackknife(np.array(vals)), failures


# --- continuum prediction ------------------------------------------------------------

def _polar_nodes(rho: float, n_r: int, n_theta: int):
    xr, wr = roots_legendre(n_r)
    r = 0.5 * rho * (xr + 1.0)
    wr = 0.5 * rho * wr
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R_, T_ = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([R_ * np.cos(T_), R_ * np.sin(T_)], axis=-1).reshape(-1, 2)
    w = (wr[:, None] * r[:, None] * np.full(n_theta, 2 * np.pi / n_theta)[None, :]).ravel()
    return pts, w


def _spectral_2d(A: np.ndarray, f: TestVectorField, n_r: int, n_theta: int, k_max: float, n_k: int) -> float:
    """Polar quadrature in ``k`` of ``|k . fhat|^2 / (k . A k)``.

    ``fhat`` comes from the angular Fourier modes ``F_m(r)`` of ``f`` on a
    polar grid: ``fhat(kappa, psi) = 2 pi sum_m (-i)^m e^{i m psi} int F_m(r) J_m(kappa r) r dr``.
    """
    xr, wr = roots_legendre(n_r)
    r = 0.5 * f.support_radius * (xr + 1.0)
    wr = 0.5 * f.support_radius * wr
    th = 2 * np.pi * np.arange(n_theta) / n_theta
    R_, T_ = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([R_ * np.cos(T_), R_ * np.sin(T_)], axis=-1).reshape(-1, 2)
    vals = f.evaluate(pts).reshape(n_r, n_theta, 2)
    Fm = np.fft.fft(vals, axis=1) / n_theta  # (n_r, n_theta, 2)
    modes = np.fft.fftfreq(n_theta, 1.0 / n_theta).astype(int)
    xg, wg = roots_legendre(n_k)
    n_panels = int(math.ceil(k_max))
    kap = (np.arange(n_panels)[:, None] + 0.5 * (xg[None, :] + 1.0)).ravel()
    kw = np.tile(0.5 * wg, n_panels)
    psi = 2 * np.pi * np.arange(n_theta) / n_theta
    fhat = np.zeros((len(kap), n_theta, 2), dtype=complex)
    for j, m in enumerate(modes):
        H = jv(m, np.outer(kap, r)) @ (wr[:, None] * r[:, None] * Fm[:, j, :])  # (n_kap, 2)
        fhat += 2 * np.pi * (-1j) ** m * H[:, None, :] * np.exp(1j * m * psi)[None, :, None]
    kx = np.outer(kap, np.cos(psi))
    ky = np.outer(kap, np.sin(psi))
    num = np.abs(kx * fhat[..., 0] + ky * fhat[..., 1]) ** 2
    den = A[0, 0] * kx * kx + 2 * A[0, 1] * kx * ky + A[1, 1] * ky * ky
    integrand = num / den
    total = np.sum(integrand * (kw * kap)[:, None]) * (2 * np.pi / n_theta)
    return float(total) / (2 * np.pi) ** 2


def _radial_formula(A: np.ndarray, f: TestVectorField, d: int, n_r: int = 200, n_theta: int = 720) -> float:
    """Closed-form reduction for ``f_i = w_i b(|x|)`` (Parseval in the radial variable)."""
    xr, wr = roots_legendre(n_r)
    r = 0.5 * f.support_radius * (xr + 1.0)
    wr = 0.5 * f.support_radius * wr
    b2 = f.radial_profile(r) ** 2
    radial = float(np.sum(wr * b2 * r ** (d - 1)))  # int b^2 dx / |S^{d-1}|
    w = np.asarray(f.weights, dtype=np.float64)
    if d == 2:
        th = 2 * np.pi * np.arange(n_theta) / n_theta
        om = np.stack([np.cos(th), np.sin(th)], axis=1)
        dw = np.full(n_theta, 2 * np.pi / n_theta)
    else:
        xc, wc = roots_legendre(n_theta // 4)
        ph = 2 * np.pi * np.arange(n_theta // 2) / (n_theta // 2)
        C, P = np.meshgrid(xc, ph, indexing="ij")
        s = np.sqrt(1 - C ** 2)
        om = np.stack([s * np.cos(P), s * np.sin(P), C], axis=-1).reshape(-1, 3)
        dw = (wc[:, None] * np.full(len(ph), 2 * np.pi / len(ph))[None, :]).ravel()
    ang = float(np.sum(dw * (om @ w) ** 2 / np.einsum("ki,ij,kj->k", om, A, om)))
    return radial * ang


def predict_gff_variance(a_bar, f: TestVectorField, d: int = 2, method: str = "auto",
                         n_r: int = 160, n_theta: int = 32, k_max: float = 100.0, n_k: int = 8) -> float:
    """``(2 pi)^{-d} int |k . fhat(k)|^2 / (k . abar k) dk`` for the unit-scale field ``f``.

    ``method='radial'`` uses the exact radial reduction (needs
    ``f.radial_profile`` and ``f.weights``); ``'spectral'`` integrates the
    Fourier transform numerically on polar grids (d = 2). ``'auto'`` picks
    radial when available.
    """
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    A = np.atleast_2d(np.asarray(a_bar, dtype=np.float64))
    if A.shape == (1, 1):
        if not A[0, 0] > 0:
            raise ValueError("a_bar must be positive")
        A = A[0, 0] * np.eye(d)
    if not np.all(np.linalg.eigvalsh(0.5 * (A + A.T)) > 0):
        raise ValueError("a_bar must be positive definite")
    if method == "auto":
        method = "radial" if f.radial_profile is not None and f.weights is not None else "spectral"
    if method == "radial":
        return _radial_formula(A, f, d)
    if method == "spectral":
        if d != 2:
            raise ValueError("spectral quadrature is implemented for d = 2")
        return _spectral_2d(A, f, n_r, n_theta, k_max, n_k)
    raise ValueError(f"unknown method {method!r}")


def box_energy(a_bar: float, f: TestVectorField, half_width: float, n_modes: int | None = None,
               n_r: int = 60, n_theta: int = 128, k_max: float = 40.0) -> float:
    """``int abar |grad ubar|^2`` for ``abar Lap ubar = div f`` in ``[-h, h]^2``, ``ubar = 0`` on the boundary.

    Uses the Dirichlet sine basis: the value is ``sum_mn c_mn^2 / (abar lambda_mn)``
    with ``c_mn = int f . grad phi_mn``. By default the modes are cut at
    wavenumber ``k_max / support_radius``, which the polar quadrature of
    ``c_mn`` resolves; more modes would only add aliasing.
    """
    if not a_bar > 0:
        raise ValueError("a_bar must be positive")
    ell = 2.0 * half_width
    if n_modes is None:
        n_modes = max(8, int(math.ceil(k_max / f.support_radius * ell / np.pi)))
    pts, w = _polar_nodes(f.support_radius, n_r, n_theta)
    vals = f.evaluate(pts)
    m = np.arange(1, n_modes + 1)
    km = m * np.pi / ell
    sx = np.sin(np.outer(km, pts[:, 0] + half_width))
    cx = np.cos(np.outer(km, pts[:, 0] + half_width))
    sy = np.sin(np.outer(km, pts[:, 1] + half_width))
    cy = np.cos(np.outer(km, pts[:, 1] + half_width))
    norm = 2.0 / ell
    # c_mn = norm * int (f_x km_m cos_m(x) sin_n(y) + f_y sin_m(x) km_n cos_n(y))
    c = norm * (km[:, None] * ((cx * (w * vals[:, 0])) @ sy.T)
                + km[None, :] * ((sx * (w * vals[:, 1])) @ cy.T))
    lam = km[:, None] ** 2 + km[None, :] ** 2
    return float(np.sum(c ** 2 / lam) / a_bar)


# --- Brascamp-Lieb -------------------------------------------------------------------

def brascamp_lieb_check(tau_samples, v, k: int = 1, phi_samples=None, tol: float = 1e-10) -> dict:
    """Per-sample inequality ``v.D(tau)^{-1} v <= sum_e (grad w)^2 / a(e)`` with ``w = Lap_D^{-1} v``.

    ``v`` is a mean-zero vertex function vanishing on the boundary. Also
    compares the ``2k``-th moment of ``sum phi v`` (from ``phi_samples`` when
    given, otherwise ``(2k-1)!! <(v.D^{-1}v)^k>``) with
    ``(2k-1)!! (sum_e c_e <a_e^{-k}>) (sum_e c_e)^{k-1}``, ``c_e = (grad w)^2``.
    """
    tau_samples = list(tau_samples)
    v = np.asarray(v, dtype=np.float64)
    box = tau_samples[0].box
    if abs(v.sum()) > 1e-12 * max(1.0, np.abs(v).sum()):
        raise ValueError("v must have zero mean")
    if np.any(v[box.boundary_mask()] != 0):
        raise ValueError("v must vanish on the boundary")
    unit = ConductanceOperator.unit(box)
    w = solve_dirichlet(unit, rhs=-v, tol=tol, method="direct").solution
    c = unit.grad(w) ** 2
    lhs, rhs = [], []
    inv_k = []
    for tau in tau_samples:
        op = ConductanceOperator.from_tau(tau)
        u = solve_dirichlet(op, rhs=-v, tol=tol, method="direct").solution
        lhs.append(float(v @ u))
        rhs.append(float(np.sum(c / op.a)))
        inv_k.append(float(np.sum(c * op.a ** (-float(k)))))
    lhs, rhs = np.array(lhs), np.array(rhs)
    slack = 100 * tol * np.maximum(1.0, np.abs(rhs))
    violations = int(np.sum(lhs > rhs + slack))
    dfact = math.prod(range(1, 2 * k, 2))
    if phi_samples is not None:
        s = np.array([float(phi.values @ v) for phi in phi_samples]) ** (2 * k)
    else:
        s = dfact * lhs ** k
    mom = jackknife(s)
    ck = jackknife(np.array(inv_k))
    bound = dfact * ck.value * c.sum() ** (k - 1)
    bound_sigma = dfact * ck.sigma * c.sum() ** (k - 1)
    return {
        "n_samples": len(lhs),
        "violations": violations,
        "max_margin": float(np.max(lhs - rhs)) if len(lhs) else 0.0,
        "lhs": lhs.tolist(),
        "rhs": rhs.tolist(),
        "moment": mom.value,
        "moment_sigma": mom.sigma,
        "moment_bound": bound,
        "moment_bound_sigma": bound_sigma,
        "moment_consistent": bool(mom.value <= bound + 3 * math.hypot(mom.sigma, bound_sigma)),
    }


def dipole(box, x=None, axis: int = 0) -> np.ndarray:
    """``+1`` at ``x`` (default origin) and ``-1`` at ``x + e_axis``."""
    x = np.zeros(box.dim, dtype=np.int64) if x is None else np.asarray(x, dtype=np.int64)
    y = x.copy()
    y[axis] += 1
    v = np.zeros(box.n_vertices)
    i, j = box.index_of(np.stack([x, y]))
    v[i], v[j] = 1.0, -1.0
    return v


# --- moments -----------------------------------------------------------------------

def moment_structure(phi_samples, f: TestVectorField, k_max: int = 3, values=None) -> dict:
    """Wick ratios ``m_{2k} / ((2k-1)!! m_2^k)`` and odd moments of ``F_R`` with jackknife errors."""
    x = F_values(phi_samples, f) if values is None else np.asarray(values, dtype=np.float64)
    require(len(x), 100 * k_max, "samples for the requested moment order")
    out = {}
    for k in range(2, k_max + 1):
        df = math.prod(range(1, 2 * k, 2))
        e = jackknife(x, lambda v, k=k, df=df: np.mean(v ** (2 * k)) / (df * np.mean(v ** 2) ** k))
        out[f"wick_{2 * k}"] = _est(e)
    for k in (1, 3):
        e = jackknife(x, lambda v, k=k: np.mean(v ** k))
        out[f"m_{k}"] = _est(e)
    return out


# --- energy convergence -------------------------------------------------------------

def energy_convergence(tau_samples_by_R: dict, f: TestVectorField, a_bar: float, L_over_R: float = 8.0,
                       method: str = "direct") -> dict:
    """``<(grad u_R, a grad u_R)_R>`` per ``R`` and its gap to the continuum energy.

    The continuum problem lives on ``[-L/R, L/R]^d`` with constant ``a_bar``.
    The lattice energy equals ``(f_R, grad u_R)_R`` at the solution.
    """
    cont = box_energy(a_bar, f, L_over_R)
    out = {"continuum": cont, "profile": {}}
    for R, samples in sorted(tau_samples_by_R.items()):
        fr = f.with_R(R)
        vals = np.array([tau_route_value(t, fr, method) for t in samples])
        e = jackknife(vals) if len(vals) > 1 else Estimate(float(vals[0]), 0.0, 1)
        out["profile"][R] = {"energy": e.value, "sigma": e.sigma, "gap": e.value - cont,
                             "abs_gap": abs(e.value - cont), "n": len(vals)}
    return out
