"""Height fields, log-conductance fields, test vector fields and snapshot I/O."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .lattice import CONVENTIONS, DomainError, Edge, LatticeBox

SNAPSHOT_MAGIC = b"SOSF"
SNAPSHOT_VERSION = 1
PAYLOAD_PHI = 0
PAYLOAD_TAU = 1


class DegenerateClusterError(DomainError):
    """A bad cluster has no boundary vertex inside the box."""


class SnapshotError(IOError):
    """Malformed or corrupted snapshot file."""


@dataclass(frozen=True, eq=False)
class PhiField:
    box: LatticeBox
    values: np.ndarray
    bc: str = "dirichlet-zero"

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.box.n_vertices,):
            raise DomainError(f"expected {self.box.n_vertices} vertex values, got {v.shape}")
        if self.bc not in ("dirichlet-zero", "free"):
            raise DomainError(f"unknown boundary condition {self.bc!r}")
        if self.bc == "dirichlet-zero" and np.any(v[self.box.boundary_mask()] != 0.0):
            raise DomainError("dirichlet-zero field has nonzero boundary values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def grad(self) -> np.ndarray:
        """Gradient on every edge of the box, canonical edge order."""
        return edge_gradient(self.box, self.values)


@dataclass(frozen=True, eq=False)
class TauField:
    box: LatticeBox
    tau: np.ndarray

    def __post_init__(self):
        t = np.ascontiguousarray(self.tau, dtype=np.float64)
        if t.shape != (len(self.box.edges()),):
            raise DomainError(f"expected {len(self.box.edges())} edge values, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise DomainError("tau must be finite on every edge")
        t.setflags(write=False)
        object.__setattr__(self, "tau", t)

    @property
    def a(self) -> np.ndarray:
        """Conductances ``exp(tau)``."""
        return np.exp(self.tau)

    @classmethod
    def constant(cls, box: LatticeBox, value: float = 0.0) -> "TauField":
        return cls(box, np.full(len(box.edges()), float(value)))


def edge_gradient(box: LatticeBox, values: np.ndarray) -> np.ndarray:
    e = box.edges()
    return values[e.head] - values[e.tail]


def gradient(phi: PhiField, e: Edge) -> float:
    """``phi(x + e_i) - phi(x)`` for the edge ``e = (x, i)``."""
    idx = phi.box.index_of([e.base, e.tip])
    if np.any(idx < 0):
        raise DomainError(f"edge {e} is not inside the box")
    return float(phi.values[idx[1]] - phi.values[idx[0]])


def divergence(box: LatticeBox, edge_values: np.ndarray) -> np.ndarray:
    """Forward divergence: sum of outgoing minus incoming edge values at each vertex."""
    e = box.edges()
    out = np.zeros(box.n_vertices)
    np.add.at(out, e.tail, edge_values)
    np.subtract.at(out, e.head, edge_values)
    return out


def affine(box: LatticeBox, p: Sequence[float]) -> np.ndarray:
    """``l_p(x) = p . x`` on the vertices of ``box``."""
    return box.vertices() @ np.asarray(p, dtype=np.float64)


def hat_transform(f: np.ndarray, clusters) -> np.ndarray:
    """Replace ``f`` on each cluster by the mean of ``f`` over the cluster boundary.

    ``clusters`` is a :class:`~sos_lab.percolation.ClusterDecomposition` on the
    same box as ``f``; its boundary sets are already clipped to the box.
    Boundary vertices that belong to another cluster are skipped, so the
    averages only read values the transform leaves untouched (idempotence).
    A cluster enclosed by other clusters uses the free boundary of its group
    of mutually adjacent clusters instead.
    """
    f = np.asarray(f, dtype=np.float64)
    out = f.copy()
    label = np.full(len(f), -1, dtype=np.int64)
    for k, c in enumerate(clusters.clusters):
        label[c.vertices] = k
    free = [c.boundary[label[c.boundary] < 0] for c in clusters.clusters]
    for k, c in enumerate(clusters.clusters):
        bnd = free[k]
        if len(bnd) == 0:
            bnd = _group_boundary(k, clusters.clusters, label, free)
        if len(bnd) == 0:
            raise DegenerateClusterError(
                f"cluster at {c.representative} has no free boundary vertex in the box")
        out[c.vertices] = np.mean(f[bnd])
    return out


def _group_boundary(k: int, cl: list, label: np.ndarray, free: list) -> np.ndarray:
    """Free boundary of the group of clusters connected to ``k`` through shared boundary vertices."""
    seen = {k}
    stack = [k]
    while stack:
        j = stack.pop()
        for m in np.unique(label[cl[j].boundary]):
            if m >= 0 and m not in seen:
                seen.add(int(m))
                stack.append(int(m))
    return np.unique(np.concatenate([free[j] for j in sorted(seen)]))


def _bump(x: np.ndarray) -> np.ndarray:
    r2 = np.sum(x * x, axis=-1)
    return np.where(r2 < 1.0, (1.0 - r2) ** 3, 0.0)


@dataclass(frozen=True, eq=False)
class TestVectorField:
    """Compactly supported vector field ``f = (f_1, ..., f_d)`` evaluated at ``x / R``.

    Each component maps points of shape ``(n, d)`` to ``n`` values and must
    vanish outside the ball of radius ``support_radius``.
    """

    __test__ = False  # not a pytest class

    components: tuple[Callable[[np.ndarray], np.ndarray], ...]
    R: float = 1.0
    support_radius: float = 1.0
    radial_profile: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    weights: tuple[float, ...] | None = None

    @property
    def dim(self) -> int:
        return len(self.components)

    def with_R(self, R: float) -> "TestVectorField":
        return TestVectorField(self.components, float(R), self.support_radius,
                               self.radial_profile, self.weights)

    def scaled(self, c: float) -> "TestVectorField":
        comps = tuple((lambda g: (lambda x: c * g(x)))(g) for g in self.components)
        w = None if self.weights is None else tuple(c * v for v in self.weights)
        return TestVectorField(comps, self.R, self.support_radius, self.radial_profile, w)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Values at continuum ``points``, shape ``(n, d)``."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return np.stack([g(pts) for g in self.components], axis=1)

    def on_edges(self, box: LatticeBox) -> np.ndarray:
        """``f_i(x / R)`` attached to the edge ``(x, x + e_i)``."""
        e = box.edges()
        pts = e.base.astype(np.float64) / self.R
        vals = np.empty(len(e))
        for i, g in enumerate(self.components):
            sel = e.axis == i
            if sel.any():
                vals[sel] = g(pts[sel])
        return vals

    def check_support(self, box: LatticeBox) -> None:
        reach = math.ceil(self.support_radius * self.R)
        lo, hi = np.asarray(box.lo), np.asarray(box.hi)
        if np.any(lo > -reach) or np.any(hi < reach):
            raise DomainError(
                f"support radius {self.support_radius}*R={self.support_radius * self.R} "
                f"does not fit in the interior of the box {box.lo}..{box.hi}")


def bump_field(d: int = 2, R: float = 1.0, weights: Sequence[float] | None = None) -> TestVectorField:
    """Default test field: ``f_i(x) = w_i (1 - |x|^2)^3`` on the unit ball (C^2, compact support)."""
    w = tuple(float(v) for v in (weights if weights is not None else (1.0,) * d))
    if len(w) != d:
        raise DomainError("weights must have length d")
    comps = tuple((lambda c: (lambda x: c * _bump(x)))(c) for c in w)
    return TestVectorField(comps, float(R), 1.0, radial_profile=lambda r: np.where(r < 1, (1 - r * r) ** 3, 0.0),
                           weights=w)


def evaluate_F_R(phi: PhiField, f: TestVectorField) -> float:
    """``R^{-d/2} sum_x sum_i f_i(x/R) (phi(x+e_i) - phi(x))``."""
    f.check_support(phi.box)
    d = phi.box.dim
    return float(f.R ** (-d / 2) * np.dot(f.on_edges(phi.box), phi.grad()))


def F_R_weights(box: LatticeBox, f: TestVectorField) -> np.ndarray:
    """Vertex weights ``v`` with ``F_R(phi) = v . phi`` (``v = -R^{-d/2} div f_R``)."""
    f.check_support(box)
    return -f.R ** (-box.dim / 2) * divergence(box, f.on_edges(box))


def inner_product_R(g, h, R: float, d: int = 2) -> float:
    """``(g, h)_R = R^{-d} sum g h`` over a common index set."""
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    if g.shape != h.shape:
        raise DomainError(f"mismatched index sets {g.shape} vs {h.shape}")
    return float(R ** (-d) * np.dot(g.ravel(), h.ravel()))


# --- snapshots ---------------------------------------------------------------

def _header(box: LatticeBox, kind: int) -> bytes:
    if not box.is_box:
        raise DomainError("snapshots are defined for boxes only")
    d = box.dim
    conv = CONVENTIONS.index(box.convention)
    return (SNAPSHOT_MAGIC + struct.pack("<IIB", SNAPSHOT_VERSION, d, conv)
            + struct.pack(f"<{d}q", *box.lo) + struct.pack(f"<{d}q", *box.hi)
            + struct.pack("<B", kind))


def snapshot_bytes(obj: PhiField | TauField) -> bytes:
    if isinstance(obj, PhiField):
        head, payload = _header(obj.box, PAYLOAD_PHI), obj.values
    elif isinstance(obj, TauField):
        head, payload = _header(obj.box, PAYLOAD_TAU), obj.tau
    else:
        raise TypeError(type(obj))
    return head + np.asarray(payload, dtype="<f8").tobytes()


def write_snapshot(path, obj: PhiField | TauField) -> None:
    Path(path).write_bytes(snapshot_bytes(obj))


def parse_snapshot(data: bytes, source: str = "<bytes>") -> PhiField | TauField:
    if len(data) < 13 or data[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{source}: bad magic")
    version, d, conv = struct.unpack_from("<IIB", data, 4)
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{source}: unsupported version {version}")
    if not 1 <= d <= 3 or conv >= len(CONVENTIONS):
        raise SnapshotError(f"{source}: bad header (d={d}, convention={conv})")
    off = 13
    need = off + 16 * d + 1
    if len(data) < need:
        raise SnapshotError(f"{source}: truncated header")
    lo = struct.unpack_from(f"<{d}q", data, off)
    hi = struct.unpack_from(f"<{d}q", data, off + 8 * d)
    kind = data[off + 16 * d]
    try:
        box = LatticeBox(tuple(lo), tuple(hi), kind="cube", convention=CONVENTIONS[conv])
    except DomainError as exc:
        raise SnapshotError(f"{source}: {exc}") from exc
    n = box.n_vertices if kind == PAYLOAD_PHI else len(box.edges())
    body = data[need:]
    if kind not in (PAYLOAD_PHI, PAYLOAD_TAU) or len(body) != 8 * n:
        raise SnapshotError(f"{source}: payload size {len(body)} does not match {n} values")
    vals = np.frombuffer(body, dtype="<f8").astype(np.float64)
    if not np.all(np.isfinite(vals)):
        raise SnapshotError(f"{source}: non-finite values in payload")
    try:
        if kind == PAYLOAD_PHI:
            return PhiField(box, vals, bc="free")
        return TauField(box, vals)
    except DomainError as exc:
        raise SnapshotError(f"{source}: {exc}") from exc


def read_snapshot(path) -> PhiField | TauField:
    return parse_snapshot(Path(path).read_bytes(), str(path))
