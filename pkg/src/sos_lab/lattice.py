"""Finite subsets of Z^d: boxes, triadic cubes, adapted simplexes and edge lists.

Two cube conventions are in use and every box carries its tag:

``closed``
    ``z + [-3^n, 3^n]^d`` (side ``2*3^n + 1`` vertices).  Children of a closed
    cube share their faces, so their edge sets tile the parent.
``half-open``
    ``z + [0, 3^n)^d`` (side ``3^n`` vertices).  Children partition the parent
    vertex set exactly.

Vertices of a box are always listed in C order of the bounding box, and edges
``(x, x + e_i)`` lexicographically by base vertex, then by axis.
"""
from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

CONVENTIONS = ("closed", "half-open")


class DomainError(ValueError):
    """Raised for geometrically invalid requests (empty sets, bad scales, ...)."""


@dataclass(frozen=True)
class Edge:
    base: tuple[int, ...]
    axis: int

    @property
    def tip(self) -> tuple[int, ...]:
        t = list(self.base)
        t[self.axis] += 1
        return tuple(t)


@dataclass(frozen=True, eq=False)
class LatticeBox:
    """A finite vertex set, described by its bounding box and an optional mask.

    ``lo`` and ``hi`` are inclusive corners. ``mask`` (shape of the bounding
    box) selects a subset for simplexes and arbitrary vertex sets.
    """

    lo: tuple[int, ...]
    hi: tuple[int, ...]
    kind: str = "cube"
    convention: str = "closed"
    scale: int | None = None
    mask: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if len(self.lo) != len(self.hi) or not 1 <= len(self.lo) <= 3:
            raise DomainError("dimension must be 1, 2 or 3")
        if any(h < l for l, h in zip(self.lo, self.hi)):
            raise DomainError(f"empty box lo={self.lo} hi={self.hi}")
        if self.convention not in CONVENTIONS:
            raise DomainError(f"unknown cube convention {self.convention!r}")
        if self.mask is not None:
            m = np.asarray(self.mask, dtype=bool)
            if m.shape != self.shape:
                raise DomainError("mask shape does not match bounding box")
            if not m.any():
                raise DomainError("empty vertex set")
            m.setflags(write=False)
            object.__setattr__(self, "mask", m)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    @property
    def is_box(self) -> bool:
        return self.mask is None

    @property
    def n_vertices(self) -> int:
        if self.mask is None:
            return int(np.prod(self.shape))
        return int(self.mask.sum())

    @property
    def center(self) -> np.ndarray:
        return (np.asarray(self.lo) + np.asarray(self.hi)) / 2

    def full_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.shape, dtype=bool)
        return self.mask

    def vertices(self) -> np.ndarray:
        """Vertex coordinates, shape ``(n, d)``, int64, C order."""
        idx = np.argwhere(self.full_mask())
        return idx.astype(np.int64) + np.asarray(self.lo, dtype=np.int64)

    def index_grid(self) -> np.ndarray:
        """Local vertex index on the bounding box, -1 outside the set."""
        m = self.full_mask()
        grid = np.full(self.shape, -1, dtype=np.int64)
        grid[m] = np.arange(int(m.sum()))
        return grid

    def index_of(self, points) -> np.ndarray:
        """Local indices of ``points`` (shape ``(k, d)``); -1 where outside."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
        rel = pts - np.asarray(self.lo)
        inside = np.all((rel >= 0) & (rel < np.asarray(self.shape)), axis=1)
        out = np.full(len(pts), -1, dtype=np.int64)
        if inside.any():
            grid = self.index_grid()
            out[inside] = grid[tuple(rel[inside].T)]
        return out

    def contains(self, points) -> np.ndarray:
        return self.index_of(points) >= 0

    def boundary_mask(self) -> np.ndarray:
        """Boolean per vertex: on the boundary of the set.

        For boxes, a coordinate equals ``lo`` or ``hi``. For masked sets, the
        vertex has a nearest neighbour outside the set.
        """
        verts = self.vertices()
        if self.mask is None:
            lo, hi = np.asarray(self.lo), np.asarray(self.hi)
            return np.any((verts == lo) | (verts == hi), axis=1)
        grid = np.pad(self.full_mask(), 1, constant_values=False)
        rel = verts - np.asarray(self.lo) + 1
        out = np.zeros(len(verts), dtype=bool)
        for i in range(self.dim):
            for s in (-1, 1):
                nb = rel.copy()
                nb[:, i] += s
                out |= ~grid[tuple(nb.T)]
        return out

    def sub_box(self, other: "LatticeBox") -> bool:
        """True if ``other`` lies inside this set."""
        return bool(np.all(self.contains(other.vertices())))

    def translate(self, z: Sequence[int]) -> "LatticeBox":
        z = tuple(int(v) for v in z)
        return LatticeBox(
            tuple(a + b for a, b in zip(self.lo, z)),
            tuple(a + b for a, b in zip(self.hi, z)),
            self.kind, self.convention, self.scale, self.mask,
        )

    def edges(self) -> "EdgeList":
        """Cached :func:`enumerate_edges` of this set."""
        cached = self.__dict__.get("_edges")
        if cached is None:
            cached = enumerate_edges(self)
            object.__setattr__(self, "_edges", cached)
        return cached

    def describe(self) -> dict:
        """Report-friendly summary (centered coordinates where meaningful)."""
        out = {
            "kind": self.kind,
            "convention": self.convention,
            "lo": list(self.lo),
            "hi": list(self.hi),
            "n_vertices": self.n_vertices,
        }
        if self.scale is not None:
            out["scale"] = self.scale
            out["center"] = [float(c) for c in self.center]
        return out


def cube(L: int, d: int = 2) -> LatticeBox:
    """``Q_L = [-L, L]^d``."""
    if L < 0:
        raise DomainError("L must be non-negative")
    return LatticeBox((-L,) * d, (L,) * d, kind="cube", convention="closed")


def triadic_cube(n: int, d: int = 2, z: Sequence[int] | None = None,
                 convention: str = "closed") -> LatticeBox:
    """Triadic cube of scale ``n``.

    ``closed``: ``z + [-3^n, 3^n]^d`` (``z`` is the center, default 0).
    ``half-open``: ``z + [0, 3^n)^d`` (``z`` is the low corner, default 0).
    """
    if n < 0:
        raise DomainError("scale must be non-negative")
    z = tuple(int(v) for v in (z if z is not None else (0,) * d))
    if len(z) != d:
        raise DomainError("anchor has wrong dimension")
    s = 3 ** n
    if convention == "closed":
        lo = tuple(c - s for c in z)
        hi = tuple(c + s for c in z)
    elif convention == "half-open":
        lo = z
        hi = tuple(c + s - 1 for c in z)
    else:
        raise DomainError(f"unknown cube convention {convention!r}")
    return LatticeBox(lo, hi, kind="triadic", convention=convention, scale=n)


def centered_half_open(n: int, d: int = 2, center: Sequence[int] | None = None) -> LatticeBox:
    """Half-open triadic cube of side ``3^n`` whose center is the lattice point ``center``."""
    c = np.zeros(d, dtype=int) if center is None else np.asarray(center, dtype=int)
    return triadic_cube(n, d, tuple(c - (3 ** n - 1) // 2), convention="half-open")


def enlarge(cube_: LatticeBox) -> LatticeBox:
    """Concentric triadic parent of scale ``n+1`` (same convention)."""
    if cube_.scale is None or cube_.kind != "triadic":
        raise DomainError("enlarge needs a triadic cube")
    n = cube_.scale
    if cube_.convention == "closed":
        c = tuple(int(v) for v in cube_.center)
        return triadic_cube(n + 1, cube_.dim, c, "closed")
    return triadic_cube(n + 1, cube_.dim, tuple(l - 3 ** n for l in cube_.lo), "half-open")


def vertex_set(points) -> LatticeBox:
    """Arbitrary finite vertex set ``U`` as a masked box."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.int64))
    if pts.size == 0:
        raise DomainError("empty vertex set")
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    mask = np.zeros(tuple(hi - lo + 1), dtype=bool)
    mask[tuple((pts - lo).T)] = True
    return LatticeBox(tuple(int(v) for v in lo), tuple(int(v) for v in hi),
                      kind="set", mask=mask)


@dataclass(frozen=True, eq=False)
class EdgeList:
    """Edges of a vertex set as parallel arrays (local vertex indices)."""

    tail: np.ndarray
    head: np.ndarray
    axis: np.ndarray
    base: np.ndarray  # (m, d) base coordinates

    def __len__(self) -> int:
        return len(self.tail)

    def __iter__(self) -> Iterator[Edge]:
        for b, a in zip(self.base, self.axis):
            yield Edge(tuple(int(v) for v in b), int(a))

    def __getitem__(self, k: int) -> Edge:
        return Edge(tuple(int(v) for v in self.base[k]), int(self.axis[k]))


def enumerate_edges(box: LatticeBox) -> EdgeList:
    """All nearest-neighbour edges with both endpoints in ``box``."""
    grid = box.index_grid()
    verts = box.vertices()
    d = box.dim
    tails, heads, axes = [], [], []
    for i in range(d):
        lo = [slice(None)] * d
        hi = [slice(None)] * d
        lo[i] = slice(0, -1)
        hi[i] = slice(1, None)
        t = grid[tuple(lo)].ravel()
        h = grid[tuple(hi)].ravel()
        ok = (t >= 0) & (h >= 0)
        tails.append(t[ok])
        heads.append(h[ok])
        axes.append(np.full(int(ok.sum()), i, dtype=np.int64))
    tail = np.concatenate(tails)
    head = np.concatenate(heads)
    axis = np.concatenate(axes)
    order = np.lexsort((axis, tail))
    tail, head, axis = tail[order], head[order], axis[order]
    return EdgeList(tail, head, axis, verts[tail])


def closed_form_edge_count(box: LatticeBox) -> int:
    shape = box.shape
    total = 0
    for i in range(box.dim):
        prod = 1
        for j, s in enumerate(shape):
            prod *= (s - 1) if j == i else s
        total += prod
    return total


def triadic_children(cube_: LatticeBox) -> list[LatticeBox]:
    """The ``3^d`` triadic subcubes of scale ``n-1``, in lexicographic order.

    Half-open children partition the vertex set. Closed children share faces;
    together they cover the edge set, with edges lying in a shared face
    belonging to two children.
    """
    if cube_.kind != "triadic" or cube_.scale is None:
        raise DomainError("triadic_children needs a triadic cube")
    n, d = cube_.scale, cube_.dim
    if n < 1:
        raise DomainError("scale-0 cube has no triadic children")
    s = 3 ** (n - 1)
    out = []
    for k in itertools.product(range(3), repeat=d):
        if cube_.convention == "half-open":
            z = tuple(l + s * kk for l, kk in zip(cube_.lo, k))
        else:
            c = cube_.center
            z = tuple(int(cc) + 2 * s * (kk - 1) for cc, kk in zip(c, k))
        out.append(triadic_cube(n - 1, d, z, cube_.convention))
    return out


def simplex_labels(box: LatticeBox) -> list[tuple[int, ...]]:
    """Permutation label of every vertex of ``box`` (coordinate order about the center).

    Ties go to the lexicographically smallest eligible permutation, which is
    exactly what a stable argsort returns.
    """
    rel = box.vertices() - box.center
    order = np.argsort(rel, axis=1, kind="stable")
    return [tuple(int(v) for v in row) for row in order]


def enumerate_simplexes(n: int, d: int = 2, z: Sequence[int] | None = None) -> list[LatticeBox]:
    """The ``d!`` adapted simplexes tiling the side-``3^n`` cube ``z + [0, 3^n)^d``."""
    if n < 0:
        raise DomainError("scale must be non-negative")
    parent = triadic_cube(n, d, z, convention="half-open")
    labels = simplex_labels(parent)
    verts = parent.vertices() - np.asarray(parent.lo)
    out = []
    for perm in itertools.permutations(range(d)):
        sel = np.array([lab == perm for lab in labels])
        if not sel.any():
            # only happens for n = 0 (single vertex): empty simplexes are skipped
            continue
        mask = np.zeros(parent.shape, dtype=bool)
        mask[tuple(verts[sel].T)] = True
        out.append(LatticeBox(parent.lo, parent.hi, kind="simplex",
                              convention="half-open", scale=n, mask=mask))
    return out


def neighbors(point: Sequence[int]) -> list[tuple[int, ...]]:
    p = list(point)
    out = []
    for i in range(len(p)):
        for s in (-1, 1):
            q = p.copy()
            q[i] += s
            out.append(tuple(q))
    return out


def graph_diameter(vertices) -> int:
    """Graph diameter of a connected vertex set in the nearest-neighbour graph."""
    pts = [tuple(int(v) for v in p) for p in np.atleast_2d(np.asarray(vertices))]
    if not pts or len(pts[0]) == 0:
        raise DomainError("empty vertex set")
    pset = set(pts)
    best = 0
    for src in pset:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            x = queue.popleft()
            for y in neighbors(x):
                if y in pset and y not in dist:
                    dist[y] = dist[x] + 1
                    queue.append(y)
        if len(dist) != len(pset):
            raise DomainError("vertex set is not connected")
        best = max(best, max(dist.values()))
    return best


def edge_lookup(box: LatticeBox, sub: LatticeBox) -> np.ndarray:
    """Positions of the edges of ``sub`` inside ``box.edges()``."""
    e = box.edges()
    table = np.full((box.n_vertices, box.dim), -1, dtype=np.int64)
    table[e.tail, e.axis] = np.arange(len(e))
    se = sub.edges()
    idx = box.index_of(se.base)
    if np.any(idx < 0):
        raise DomainError("sub-domain is not contained in the box")
    out = table[idx, se.axis]
    if np.any(out < 0):
        raise DomainError("sub-domain edge missing from the box")
    return out


def vertex_lookup(box: LatticeBox, sub: LatticeBox) -> np.ndarray:
    """Positions of the vertices of ``sub`` inside ``box``."""
    idx = box.index_of(sub.vertices())
    if np.any(idx < 0):
        raise DomainError("sub-domain is not contained in the box")
    return idx
