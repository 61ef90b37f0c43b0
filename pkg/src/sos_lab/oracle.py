"""Brute-force reference implementations used to validate the main code path.

Nothing here shares numerical kernels with the solvers or samplers: dense
Cholesky instead of sparse factorizations, explicit spanning-tree lists
instead of determinants, adaptive quadrature, exact symbolic integration and
plain-Python flood fill.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg
import sympy
from scipy import integrate

DENSE_CAP = 200
TREE_VERTEX_CAP = 12


class OracleError(ValueError):
    """Oracle precondition violated (size cap, non-SPD input, non-integrable density)."""


# --- dense linear algebra -------------------------------------------------------------

@dataclass
class DenseProblem:
    matrix: np.ndarray
    rhs: np.ndarray

    def __post_init__(self):
        self.matrix = np.array(self.matrix, dtype=np.float64)
        self.rhs = np.array(self.rhs, dtype=np.float64)
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.rhs.shape[0] != n:
            raise OracleError("matrix must be square and match the right side")
        if n > DENSE_CAP:
            raise OracleError(f"dense oracle capped at {DENSE_CAP} unknowns, got {n}")
        if not np.allclose(self.matrix, self.matrix.T, rtol=0, atol=1e-14 * np.abs(self.matrix).max()):
            raise OracleError("matrix is not symmetric")


def dense_solve(problem: DenseProblem) -> np.ndarray:
    try:
        c = scipy.linalg.cho_factor(problem.matrix, lower=True)
    except np.linalg.LinAlgError as exc:
        raise OracleError("matrix is not positive definite") from exc
    return scipy.linalg.cho_solve(c, problem.rhs)


def dense_inverse(matrix) -> np.ndarray:
    A = np.asarray(matrix, dtype=np.float64)
    return dense_solve(DenseProblem(A, np.eye(A.shape[0])))


def dense_laplacian(points: np.ndarray, a_of_edge) -> np.ndarray:
    """Dense weighted Laplacian on a point list, nearest-neighbour edges found by brute force.

    ``a_of_edge(x, y)`` returns the conductance of the edge ``{x, y}``.
    """
    pts = [tuple(int(v) for v in p) for p in points]
    n = len(pts)
    M = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            if sum(abs(a - b) for a, b in zip(pts[i], pts[j])) == 1:
                w = a_of_edge(pts[i], pts[j])
                M[i, i] += w
                M[j, j] += w
                M[i, j] -= w
                M[j, i] -= w
    return M


def dense_dirichlet_minimum(M: np.ndarray, boundary: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, float]:
    """Minimizer of ``v.M v / 2`` with ``v = g`` on ``boundary``, and the minimum value."""
    boundary = np.asarray(boundary, dtype=bool)
    I = np.flatnonzero(~boundary)
    Bd = np.flatnonzero(boundary)
    v = np.array(g, dtype=np.float64)
    if len(I):
        v[I] = dense_solve(DenseProblem(M[np.ix_(I, I)], -M[np.ix_(I, Bd)] @ g[Bd]))
    return v, 0.5 * float(v @ M @ v)


# --- spanning trees ---------------------------------------------------------------------

def wired_graph(box) -> tuple[int, list]:
    """Interior vertices of a box plus one ghost vertex for the whole boundary.

    Returns ``(n_vertices, [(edge_position, u, v), ...])`` with edges
    between two boundary vertices removed.
    """
    verts = [tuple(int(c) for c in p) for p in box.vertices()]
    lo, hi = box.lo, box.hi
    on_bnd = [any(c == l or c == h for c, l, h in zip(p, lo, hi)) for p in verts]
    label = {}
    k = 0
    for p, b in zip(verts, on_bnd):
        if not b:
            label[p] = k
            k += 1
    ghost = k
    for p, b in zip(verts, on_bnd):
        if b:
            label[p] = ghost
    edges = []
    for pos, e in enumerate(box.edges()):
        u, v = label[e.base], label[e.tip]
        if u == ghost and v == ghost:
            continue
        edges.append((pos, u, v))
    return k + 1, edges


def _connected(n: int, edges) -> bool:
    adj = {i: set() for i in range(n)}
    for _, u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    seen = {0}
    stack = [0]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    return len(seen) == n


def spanning_trees(n: int, edges) -> list[tuple[int, ...]]:
    """All spanning trees of a multigraph by recursive contraction and deletion.

    ``edges`` are ``(id, u, v)`` on vertices ``0..n-1``; trees are returned as
    sorted tuples of edge ids.
    """
    if n > TREE_VERTEX_CAP:
        raise OracleError(f"tree enumeration capped at {TREE_VERTEX_CAP} vertices, got {n}")
    out = []

    def rec(n_left, es, chosen):
        if n_left == 1:
            out.append(tuple(sorted(chosen)))
            return
        if not es:
            return
        eid, u, v = es[0]
        rest = es[1:]
        # contract: merge v into u, relabel, drop loops
        merged = []
        for (i, a, b) in rest:
            a = u if a == v else a
            b = u if b == v else b
            if a != b:
                merged.append((i, a, b))
        rec(n_left - 1, _relabel(merged, n_left, v), chosen + [eid])
        # delete, if the rest still spans
        if _connected(n_left, rest):
            rec(n_left, rest, chosen)

    if _connected(n, edges):
        rec(n, list(edges), [])
    return out


def _relabel(edges, n_old: int, removed: int):
    """Shift vertex labels above ``removed`` down by one."""
    return [(i, a - (a > removed), b - (b > removed)) for i, a, b in edges]


@lru_cache(maxsize=8)
def _trees_for_box(lo: tuple, hi: tuple):
    from .lattice import LatticeBox

    box = LatticeBox(lo, hi)
    n, edges = wired_graph(box)
    return n, tuple(spanning_trees(n, edges))


def enumerate_wired_spanning_trees(box, tau) -> float:
    """``sum_T prod_{e in T} a(e)`` over spanning trees of the wired graph of ``box``.

    ``tau`` is an array (or TauField) of edge values in ``box.edges()`` order.
    Products are formed exactly term by term and summed with compensated
    summation.
    """
    n, edges = wired_graph(box)
    if n > TREE_VERTEX_CAP:
        raise OracleError(f"wired graph has {n} vertices (cap {TREE_VERTEX_CAP})")
    t = np.asarray(getattr(tau, "tau", tau), dtype=np.float64)
    a = [math.exp(v) for v in t]
    _, trees = _trees_for_box(tuple(box.lo), tuple(box.hi))
    return math.fsum(math.prod(a[i] for i in tree) for tree in trees)


# --- quadrature -----------------------------------------------------------------------

def quadrature_magic_identity(z: float) -> tuple[float, float]:
    """``pi^{-1/2} int exp(-z e^t - e^{-t} - t/2) dt`` and an error bound.

    The integral is split at the mode region; tails beyond the cut points are
    bounded analytically and added to the error.
    """
    if z < 0:
        raise OracleError("z must be non-negative")

    def g(t):
        return math.exp(-z * math.exp(t) - math.exp(-t) - 0.5 * t)

    lo = -math.log(800.0)  # exp(-e^{-t}) < e^{-800} below
    tail_lo = math.exp(-800.0) * 2 * math.exp(-0.5 * lo)
    if z > 0:
        hi = max(math.log(800.0 / z), 10.0)
        tail_hi = math.exp(-800.0) * 2 * math.exp(-0.5 * hi)
        pieces = [(lo, 0.0), (0.0, hi)]
    else:
        hi = 200.0
        tail_hi = 2 * math.exp(-0.5 * hi)
        pieces = [(lo, 0.0), (0.0, 40.0), (40.0, hi)]
    total, err = 0.0, 0.0
    for a, b in pieces:
        v, e = integrate.quad(g, a, b, epsabs=1e-15, epsrel=1e-13, limit=400)
        total += v
        err += e
    s = 1.0 / math.sqrt(math.pi)
    return total * s, (err + tail_lo + tail_hi) * s


def tau_density_quadrature(z: float, lo: float = -40.0, hi: float = 40.0):
    """Normalized density and CDF of ``~ exp(-z e^t - e^{-t} - t/2)`` (``z > 0``) by adaptive quadrature."""
    if not z > 0:
        raise OracleError("z must be positive")

    def g(t):
        return math.exp(-z * math.exp(t) - math.exp(-t) - 0.5 * t)

    Z = sum(integrate.quad(g, a, b, epsabs=0, epsrel=1e-13, limit=400)[0]
            for a, b in ((lo, 0.0), (0.0, hi)))

    def cdf(x):
        x = float(x)
        if x <= lo:
            return 0.0
        if x >= hi:
            return 1.0
        if x <= 0:
            return integrate.quad(g, lo, x, epsabs=0, epsrel=1e-12, limit=400)[0] / Z
        return 1.0 - integrate.quad(g, x, hi, epsabs=0, epsrel=1e-12, limit=400)[0] / Z

    def expectation(h):
        num = sum(integrate.quad(lambda t: h(t) * g(t), a, b, epsabs=0, epsrel=1e-12, limit=400)[0]
                  for a, b in ((lo, 0.0), (0.0, hi)))
        return num / Z

    return cdf, expectation


# --- piecewise exponential densities -------------------------------------------------

class PiecewiseExponentialCDF:
    """Exact CDF of a continuous density whose logarithm is piecewise linear.

    ``breakpoints`` ``b_1 < ... < b_m`` and ``slopes`` ``s_0, ..., s_m``
    (``s_0 > 0`` on the left tail, ``s_m < 0`` on the right). Piece masses
    are integrated symbolically.
    """

    def __init__(self, breakpoints, slopes):
        b = [sympy.nsimplify(float(v), rational=True) for v in breakpoints]
        s = [sympy.Integer(int(v)) if float(v).is_integer() else sympy.nsimplify(float(v), rational=True)
             for v in slopes]
        if len(s) != len(b) + 1:
            raise OracleError("need one more slope than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(b, b[1:])):
            raise OracleError("breakpoints must be strictly increasing")
        if not (s[0] > 0 and s[-1] < 0):
            raise OracleError("density is not integrable (outer slopes)")
        x = sympy.Symbol("x", real=True)
        self._x = x
        # log-density, continuous, zero at the first breakpoint
        logs = []
        level = sympy.Integer(0)
        for k in range(len(s)):
            left = b[k - 1] if k > 0 else b[0]
            logs.append(level + s[k] * (x - left))
            if k < len(b) and k > 0:
                level = level + s[k] * (b[k] - b[k - 1])
        self._pieces = []
        edges = [-sympy.oo] + b + [sympy.oo]
        for k in range(len(s)):
            lo_, hi_ = edges[k], edges[k + 1]
            expr = sympy.exp(logs[k])
            mass = sympy.integrate(expr, (x, lo_, hi_))
            self._pieces.append((lo_, hi_, expr, mass))
        self._masses = [sympy.N(p[3], 40) for p in self._pieces]
        self._total = sum(self._masses)

    @property
    def total_mass(self) -> float:
        return float(self._total)

    def cdf_at_infinity(self) -> float:
        return float(sum(m / self._total for m in self._masses))

    def vectorized(self):
        """Numpy evaluator built from the exact per-piece antiderivatives."""
        x = self._x
        funcs, los, starts = [], [], []
        acc = 0.0
        for (lo_, hi_, expr, _), m in zip(self._pieces, self._masses):
            base = lo_ if lo_ != -sympy.oo else None
            anti = sympy.integrate(expr, x)
            off = 0 if base is None else anti.subs(x, base)
            funcs.append(sympy.lambdify(x, anti - off, "numpy"))
            los.append(float(lo_))
            starts.append(acc)
            acc += float(m)
        total = float(self._total)
        his = los[1:] + [math.inf]

        def cdf(v):
            v = np.asarray(v, dtype=np.float64)
            out = np.zeros_like(v)
            for f, lo_, hi_, st in zip(funcs, los, his, starts):
                sel = (v > lo_) & (v <= hi_)
                out[sel] = (st + f(v[sel])) / total
            return np.clip(out, 0.0, 1.0)

        return cdf

    def __call__(self, v) -> np.ndarray:
        vals = np.atleast_1d(np.asarray(v, dtype=np.float64))
        out = np.empty(len(vals))
        for n, val in enumerate(vals):
            xv = sympy.nsimplify(float(val), rational=True)
            acc = sympy.Integer(0)
            for (lo_, hi_, expr, _), m in zip(self._pieces, self._masses):
                if xv >= hi_:
                    acc += m
                elif xv > lo_:
                    acc += sympy.N(sympy.integrate(expr, (self._x, lo_, xv)), 40)
                    break
                else:
                    break
            out[n] = float(acc / self._total)
        return out


def piecewise_exponential_cdf(breakpoints, slopes) -> PiecewiseExponentialCDF:
    return PiecewiseExponentialCDF(breakpoints, slopes)


def heatbath_cdf(neighbors) -> PiecewiseExponentialCDF:
    """CDF of the density ``~ exp(-sum_j |v - y_j|)``; coincident neighbours are merged."""
    ys = sorted(float(y) for y in neighbors)
    m = len(ys)
    uniq = sorted(set(ys))
    slopes = [m]
    below = 0
    for y in uniq:
        below += ys.count(y)
        slopes.append(m - 2 * below)
    return PiecewiseExponentialCDF(uniq, slopes)


# --- clusters ----------------------------------------------------------------------------

def flood_fill_clusters(box, tau, t: float) -> list[dict]:
    """Bad-edge clusters by breadth-first flood fill over a dictionary graph.

    Returns ``{'vertices': sorted coordinate tuples, 'n_edges', 'diameter'}``
    sorted by smallest vertex.
    """
    t_arr = np.asarray(getattr(tau, "tau", tau), dtype=np.float64)
    adj: dict = {}
    n_bad = 0
    for pos, e in enumerate(box.edges()):
        if abs(t_arr[pos]) > t:
            n_bad += 1
            adj.setdefault(e.base, set()).add(e.tip)
            adj.setdefault(e.tip, set()).add(e.base)
    seen = set()
    clusters = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        while queue:
            x = queue.popleft()
            for y in adj[x]:
                if y not in comp:
                    comp.add(y)
                    queue.append(y)
        seen |= comp
        diam = 0
        for src in comp:
            dist = {src: 0}
            q = deque([src])
            while q:
                x = q.popleft()
                for y in adj[x]:
                    if y not in dist:
                        dist[y] = dist[x] + 1
                        q.append(y)
            diam = max(diam, max(dist.values()))
        n_edges = sum(len(adj[x]) for x in comp) // 2
        clusters.append({"vertices": sorted(comp), "n_edges": n_edges, "diameter": diam})
    return clusters


def tau_cdf_table(z: float, lo: float = -30.0, hi: float = 30.0, n: int = 3001):
    """Vectorized CDF of ``~ exp(-z e^t - e^{-t} - t/2)`` from quadrature on a fine grid.

    Cell masses come from adaptive quadrature; values in between are linearly
    interpolated (error ``O(h^2)``, far below Monte Carlo resolution).
    """
    if not z > 0:
        raise OracleError("z must be positive")
    shift = -0.5 * math.log(z)  # the mode sits near here; keep the grid centred on it
    grid = np.linspace(lo + shift, hi + shift, n)

    def g(t):
        return math.exp(-z * math.exp(t) - math.exp(-t) - 0.5 * t)

    cells = [integrate.quad(g, a, b, epsabs=0, epsrel=1e-12)[0] for a, b in zip(grid[:-1], grid[1:])]
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    cum /= cum[-1]

    def cdf(x):
        return np.interp(x, grid, cum, left=0.0, right=1.0)

    return cdf


def log_kernel_gff_variance(weights, a_bar: float = 1.0, profile=None) -> float:
    """``int int g(x) G(x - y) g(y) dx dy`` in d=2 for ``f = w b(|x|)``, ``g = div f``, ``G = -log|x| / (2 pi a_bar)``.

    ``g = b'(r) (w . x/r)`` is a pure first angular mode, and the first mode
    of ``-log|x - y| / (2 pi)`` is ``(r_< / r_>) cos(theta - theta') / (2 pi)``.
    The angular integrals give ``pi |w|^2 int_0^1 h(s) int_0^s h(r) r^2 dr ds``
    with ``h = b'``, integrated exactly. ``profile`` is a sympy expression in
    ``r`` supported on ``[0, 1]`` (default: the polynomial bump).
    """
    r, s = sympy.symbols("r s", nonnegative=True)
    b = (1 - r ** 2) ** 3 if profile is None else profile
    h = sympy.diff(b, r)
    inner = sympy.integrate(h * r ** 2, (r, 0, s))
    radial = sympy.integrate(h.subs(r, s) * inner, (s, 0, 1))
    w2 = sum(float(v) ** 2 for v in weights)
    return float(sympy.pi * radial) * w2 / float(a_bar)
