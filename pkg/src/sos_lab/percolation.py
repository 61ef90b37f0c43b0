"""Clusters of extreme conductances, good cubes, tails and inverse moments."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components, shortest_path

from .field import TauField
from .lattice import (DomainError, LatticeBox, centered_half_open, edge_lookup, enlarge,
                      triadic_children, vertex_lookup)
from .stats import cauchy_doubling, jackknife, linear_fit, require

DEFAULT_THRESHOLD = 5.0
THRESHOLD_SWEEP = (3.0, 4.0, 5.0, 6.0, 7.0)
INVERSE_P = (1, 2, 4)


@dataclass(frozen=True, eq=False)
class Cluster:
    representative: tuple[int, ...]
    vertices: np.ndarray  # local vertex indices in the box
    edges: np.ndarray  # positions in box.edges()
    diameter: int
    boundary: np.ndarray  # vertices outside the cluster adjacent to it, inside the box


@dataclass(frozen=True, eq=False)
class ClusterDecomposition:
    box: LatticeBox
    threshold: float
    clusters: list
    bad: np.ndarray  # per-edge flag

    def __len__(self) -> int:
        return len(self.clusters)

    @property
    def diameters(self) -> np.ndarray:
        return np.array([c.diameter for c in self.clusters], dtype=np.int64)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(c.edges) for c in self.clusters], dtype=np.int64)

    def vertex_labels(self) -> np.ndarray:
        """Cluster number per vertex, -1 for vertices touching no bad edge."""
        lab = np.full(self.box.n_vertices, -1, dtype=np.int64)
        for k, c in enumerate(self.clusters):
            lab[c.vertices] = k
        return lab


def _neighbor_table(box: LatticeBox) -> np.ndarray:
    verts = box.vertices()
    cols = []
    for i in range(box.dim):
        for s in (-1, 1):
            y = verts.copy()
            y[:, i] += s
            cols.append(box.index_of(y))
    return np.stack(cols, axis=1)


def _diameter(n: int, tail: np.ndarray, head: np.ndarray) -> int:
    if n <= 2:
        return n - 1
    g = sp.csr_matrix((np.ones(len(tail)), (tail, head)), shape=(n, n))
    dist = shortest_path(g, directed=False, unweighted=True)
    return int(dist.max())


def decompose_clusters(tau: TauField, t: float = DEFAULT_THRESHOLD) -> ClusterDecomposition:
    """Connected components of the edges with ``|tau_e| > t``.

    Vertex sets are the endpoints of bad edges; representatives are the
    lexicographically smallest vertex of each cluster, and clusters are
    listed in representative order.
    """
    if not t > 0:
        raise ValueError("threshold must be positive")
    box = tau.box
    e = box.edges()
    bad = np.abs(tau.tau) > t
    idx = np.flatnonzero(bad)
    if not len(idx):
        return ClusterDecomposition(box, float(t), [], bad)
    n = box.n_vertices
    g = sp.csr_matrix((np.ones(len(idx)), (e.tail[idx], e.head[idx])), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    edge_label = labels[e.tail[idx]]
    nbr = _neighbor_table(box)
    verts = box.vertices()
    clusters = []
    order = np.argsort(edge_label, kind="stable")
    splits = np.flatnonzero(np.diff(edge_label[order])) + 1
    for group in np.split(order, splits):
        eidx = idx[group]
        vs = np.unique(np.concatenate([e.tail[eidx], e.head[eidx]]))
        local = np.full(n, -1, dtype=np.int64)
        local[vs] = np.arange(len(vs))
        diam = _diameter(len(vs), local[e.tail[eidx]], local[e.head[eidx]])
        nb = nbr[vs].ravel()
        nb = np.unique(nb[nb >= 0])
        inside = np.zeros(n, dtype=bool)
        inside[vs] = True
        boundary = nb[~inside[nb]]
        clusters.append(Cluster(tuple(int(v) for v in verts[vs[0]]), vs, eidx, diam, boundary))
    clusters.sort(key=lambda c: c.vertices[0])
    return ClusterDecomposition(box, float(t), clusters, bad)


@dataclass
class GoodCubeReport:
    cube: dict
    diam_moment: float
    diam_bound: float
    inverse_moment_ratios: dict
    good: bool
    failing: list = field(default_factory=list)


def classify_good_cube(tau: TauField, cube: LatticeBox, t: float = DEFAULT_THRESHOLD,
                       reference_inverse_moments: dict | None = None,
                       decomposition: ClusterDecomposition | None = None,
                       ps=INVERSE_P) -> GoodCubeReport:
    """Check both good-cube conditions on ``cube``.

    (i) the sum of ``diam^{d+2}`` over clusters meeting the concentric
    enlargement is at most ``|cube| / 100``; (ii) for each ``p`` in ``ps``
    the edge-averaged ``a^{-p}`` satisfies
    ``(avg a^{-p})^{-1/p} >= (1/2) <a^{-p}>^{-1/p}`` against the supplied
    reference moments (default 1; pass ``ensemble_inverse_moments`` of the
    chain for the ensemble values). The reported ratio is the left side over
    ``<a^{-p}>^{-1/p}``; the condition is ratio >= 1/2.
    """
    box = tau.box
    big = enlarge(cube)
    if not box.sub_box(big):
        raise DomainError(f"enlargement of {cube.describe()} leaves the field box")
    dec = decomposition if decomposition is not None else decompose_clusters(tau, t)
    if dec.threshold != t:
        raise ValueError("decomposition was built at a different threshold")
    d = box.dim
    inside = np.zeros(box.n_vertices, dtype=bool)
    inside[vertex_lookup(box, big)] = True
    moment = float(sum(c.diameter ** (d + 2) for c in dec.clusters if inside[c.vertices].any()))
    bound = cube.n_vertices / 100.0
    failing = []
    if moment > bound:
        failing.append("diameter-moment")
    a = tau.a[edge_lookup(box, cube)]
    ref = reference_inverse_moments or {}
    ratios = {}
    for p in ps:
        lhs = np.mean(a ** (-float(p))) ** (-1.0 / p)
        rhs = float(ref.get(p, 1.0)) ** (-1.0 / p)
        ratios[p] = float(lhs / rhs)
        if ratios[p] < 0.5:
            failing.append(f"inverse-moment p={p}")
    return GoodCubeReport(cube.describe(), moment, bound, ratios, not failing, failing)


def scale_cubes(box: LatticeBox, n: int, n_max: int) -> list[LatticeBox]:
    """Half-open scale-``n`` cubes partitioning the central half-open cube of scale ``n_max``."""
    top = centered_half_open(n_max, box.dim)
    cubes = [top]
    for _ in range(n_max - n):
        cubes = [c for parent in cubes for c in triadic_children(parent)]
    return cubes


def good_cube_fractions(tau: TauField, scales, t: float = DEFAULT_THRESHOLD,
                        reference_inverse_moments: dict | None = None) -> dict:
    """Fraction of good cubes at each scale among the tiles of the central cube."""
    scales = list(scales)
    n_max = max(scales)
    dec = decompose_clusters(tau, t)
    out = {}
    for n in scales:
        reps = [classify_good_cube(tau, c, t, reference_inverse_moments, dec)
                for c in scale_cubes(tau.box, n, n_max)]
        out[n] = float(np.mean([r.good for r in reps]))
    return out


def minimal_scale(fractions_per_sample: list[dict]) -> np.ndarray:
    """Per sample, the smallest scale ``n`` such that every cube at scales ``>= n`` is good (inf if none)."""
    out = []
    for fr in fractions_per_sample:
        scales = sorted(fr)
        s = math.inf
        for n in reversed(scales):
            if fr[n] == 1.0:
                s = n
            else:
                break
        out.append(s)
    return np.array(out, dtype=float)


# --- tails ------------------------------------------------------------------------

def straight_path_indices(box: LatticeBox, length: int, axis: int = 0, window: int | None = None) -> np.ndarray:
    """Edge positions of all straight paths of ``length`` consecutive axis-``axis`` edges.

    Paths start at base vertices ``x`` with ``|x|_inf <= window`` (default:
    half the box half-side), so boundary layers are excluded. Shape
    ``(n_paths, length)``.
    """
    d = box.dim
    half = min((h - l) // 2 for l, h in zip(box.lo, box.hi))
    w = half // 2 if window is None else window
    e = box.edges()
    table = np.full((box.n_vertices, d), -1, dtype=np.int64)
    table[e.tail, e.axis] = np.arange(len(e))
    starts = box.vertices()
    starts = starts[np.all(np.abs(starts) <= w, axis=1)]
    cols = []
    for j in range(length):
        pts = starts.copy()
        pts[:, axis] += j
        idx = box.index_of(pts)
        if np.any(idx < 0):
            raise DomainError("path leaves the box")
        col = table[idx, axis]
        if np.any(col < 0):
            raise DomainError("path leaves the box")
        cols.append(col)
    return np.stack(cols, axis=1)


@dataclass
class TailReport:
    rows: list  # dicts: threshold, size, direction, estimate, sigma, upper, count
    alpha: dict  # (direction, threshold) -> fitted decay rate per edge
    single_edge_fit: dict
    n_samples: int

    def table(self):
        header = ["threshold", "size", "direction", "estimate", "sigma", "upper", "count"]
        return header, [[r[h] for h in header] for r in self.rows]


def tail_statistics(samples, thresholds=THRESHOLD_SWEEP, sizes=range(1, 7), min_samples: int = 100,
                    window: int | None = None) -> TailReport:
    """Joint exceedance probabilities of straight edge paths of each size.

    For each threshold ``t`` and size ``k``, estimates ``<prod 1{tau_e >= t}>``
    ("up") and ``<prod 1{tau_e <= -t}>`` ("down") averaged over all path
    translates in the central window; the error bar is the jackknife over
    samples. Empty counts are reported as 0 with the rule-of-three bound
    ``3 / n_samples``. ``alpha`` is minus the fitted slope of log-probability
    against ``k`` using the nonzero estimates.
    """
    samples = list(samples)
    require(len(samples), min_samples, "tau samples")
    box = samples[0].box
    sizes = list(sizes)
    paths = {k: straight_path_indices(box, k, 0, window) for k in sizes}
    tau = np.stack([s.tau for s in samples])
    n = len(samples)
    rows = []
    alpha = {}
    for t in thresholds:
        for direction, ind in (("up", tau >= t), ("down", tau <= -t)):
            logs, ks, ws = [], [], []
            for k in sizes:
                hits = ind[:, paths[k]].all(axis=2)  # (n_samples, n_paths)
                per_sample = hits.mean(axis=1)
                count = int(hits.sum())
                est = float(per_sample.mean())
                sigma = jackknife(per_sample).sigma if count else 0.0
                upper = est + 1.96 * sigma if count else 3.0 / n
                rows.append({"threshold": float(t), "size": k, "direction": direction,
                             "estimate": est, "sigma": float(sigma), "upper": float(upper),
                             "count": count})
                if count > 0 and sigma > 0:
                    logs.append(math.log(est))
                    ks.append(k)
                    ws.append((est / sigma) ** 2)
            if len(ks) >= 2:
                fit = linear_fit(ks, logs, ws)
                alpha[(direction, float(t))] = {"alpha": -fit["slope"], "se": fit["slope_se"],
                                                "sizes": ks}
    single = [r for r in rows if r["size"] == 1 and r["direction"] == "up" and r["count"] > 0]
    fit = linear_fit([r["threshold"] for r in single], [math.log(r["estimate"]) for r in single]) \
        if len(single) >= 2 else {}
    return TailReport(rows, alpha, fit, n)


def extreme_tail_index(logx, min_count: int = 30) -> dict:
    """Local power-law index of the upper tail of ``x`` from its largest order statistics.

    Exceedance levels ``q = 10^{-j/2}`` are used down to ``n q >= min_count``;
    the index is minus the slope of ``log q`` against ``log x`` over the three
    most extreme levels, with a Poisson standard error.
    """
    y = np.sort(np.asarray(logx, dtype=np.float64))[::-1]
    n = len(y)
    qs = [q for q in 10.0 ** (-np.arange(2, 20) / 2.0) if n * q >= min_count]
    if len(qs) < 3:
        return {"index": math.nan, "se": math.nan, "levels": []}
    qs = qs[-3:]
    s = np.array([y[int(n * q) - 1] for q in qs])
    if s[-1] <= s[0]:
        return {"index": math.inf, "se": 0.0, "levels": qs}
    fit = linear_fit(s, np.log(qs))
    se = math.sqrt(1.0 / (n * qs[-1]) + 1.0 / (n * qs[0])) / (s[-1] - s[0])
    return {"index": -fit["slope"], "se": se, "levels": qs}


def central_edge(box: LatticeBox) -> int:
    e = box.edges()
    origin = box.index_of([np.zeros(box.dim, dtype=np.int64)])[0]
    return int(np.flatnonzero((e.tail == origin) & (e.axis == 0))[0])


def estimate_inverse_moments(samples, ks=(1, 2, 4, 8), edge: int | None = None,
                             min_samples: int = 100, window: int | None = None) -> dict:
    """``<a(e)^{-k}>`` on one edge (default: the central axis-0 edge) with jackknife errors.

    Negative ``k`` gives positive moments. Each entry carries a doubling
    (Cauchy) stability test and the local tail index of ``a^{-k}`` pooled
    over the axis-0 edges of the central window. ``divergence_suspected`` is
    raised when the doubling test fails or when that index is within two
    standard errors of 1 or below (a mean that is infinite or barely finite).
    """
    samples = list(samples)
    require(len(samples), min_samples, "tau samples")
    box = samples[0].box
    edge = central_edge(box) if edge is None else edge
    tau = np.array([s.tau[edge] for s in samples])
    pool = straight_path_indices(box, 1, 0, window)[:, 0]
    pooled = np.stack([s.tau[pool] for s in samples]).ravel()
    out = {}
    for k in ks:
        x = np.exp(-float(k) * tau)
        est = jackknife(x)
        cauchy = cauchy_doubling(x)
        tail = extreme_tail_index(-float(k) * pooled)
        heavy = bool(np.isfinite(tail["index"]) and tail["index"] - 2 * tail["se"] <= 1.0)
        out[k] = {"estimate": est.value, "sigma": est.sigma, "cauchy": cauchy,
                  "tail_index": tail["index"], "tail_index_se": tail["se"],
                  "divergence_suspected": bool(not cauchy["stable"] or heavy)}
    return out


def ensemble_inverse_moments(samples, ps=INVERSE_P, window: int | None = None) -> dict:
    """``<a^{-p}>`` pooled over the axis-0 edges of the central window and all samples."""
    samples = list(samples)
    if not samples:
        raise ValueError("need at least one tau sample")
    pool = straight_path_indices(samples[0].box, 1, 0, window)[:, 0]
    tau = np.concatenate([s.tau[pool] for s in samples])
    return {p: float(np.mean(np.exp(-float(p) * tau))) for p in ps}


# --- large-scale Poincare -----------------------------------------------------------

def large_scale_poincare_check(tau: TauField, u, cube: LatticeBox) -> float:
    """``min_s avg |u - s|^2`` over ``diam^2 * (1/|cube|) sum_{E(cube)} a |grad u|^2``.

    ``u`` is a vertex function on the cube. Constant ``u`` gives 0; a
    vanishing right side with nonconstant ``u`` gives ``inf``.
    """
    box = tau.box
    if cube.kind == "triadic" and not box.sub_box(enlarge(cube)):
        raise DomainError("enlarged cube leaves the field box")
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (cube.n_vertices,):
        raise ValueError("u must be a vertex function on the cube")
    lhs = float(np.mean((u - u.mean()) ** 2))
    if lhs <= 1e-300:
        return 0.0
    e = cube.edges()
    a = tau.a[edge_lookup(box, cube)]
    grad = u[e.head] - u[e.tail]
    diam = sum(s - 1 for s in cube.shape)
    rhs = diam ** 2 * float(np.sum(a * grad * grad)) / cube.n_vertices
    if rhs == 0.0:
        return math.inf
    return lhs / rhs


def cluster_histogram(decompositions) -> dict:
    """Counts of cluster sizes (in edges) pooled over decompositions."""
    hist: dict[int, int] = {}
    for dec in decompositions:
        for s in dec.sizes:
            hist[int(s)] = hist.get(int(s), 0) + 1
    return dict(sorted(hist.items()))
