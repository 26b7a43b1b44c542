"""Receptive graphs: moving-window neighborhoods with kernel-slot allocation.

A rectangular window of (2p+1) x (2q+1) cells, each of side length mu, is
centered on every point in turn. Every point falling inside the window
becomes a source of an in-edge, and the index of the cell it falls into is
the kernel slot shared by all edges with the same relative offset. On a
regular integer lattice with mu = 1 this reproduces the stencil of an
ordinary zero-padded convolution; on displaced points the window keeps
working and simply allocates the same weights to whatever falls in.

Cells are half-open, [lo, hi) in each axis, so every point inside the window
has a well-defined slot: a source at relative offset (dx, dy) is included iff

    -(p + 1/2) * mu <= dx < (p + 1/2) * mu
    -(q + 1/2) * mu <= dy < (q + 1/2) * mu

and its slot is col + (2p+1) * row with col = floor(dx/mu + p + 1/2) and
row = floor(dy/mu + q + 1/2). The zero offset always lands in the center
cell, so every point carries a self-edge.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse


@dataclass(frozen=True)
class RectWindow:
    """Rectangular moving window: half-extents p, q in cells, cell side mu."""

    p: int
    q: int
    mu: float = 1.0

    def __post_init__(self):
        if self.p < 0 or self.q < 0:
            raise ValueError("window half-extents p, q must be non-negative")
        if not (self.mu > 0) or not np.isfinite(self.mu):
            raise ValueError("unit scale mu must be positive and finite")

    @property
    def slot_count(self) -> int:
        return (2 * self.p + 1) * (2 * self.q + 1)

    @property
    def center_slot(self) -> int:
        return self.p + (2 * self.p + 1) * self.q


class ReceptiveGraph:
    """Directed edge list (dst, src, slot) over one point set.

    Edges are sorted by (dst, src); a (dst, src) pair appears at most once,
    so the per-destination allocation keeps at most one weight per source.
    Adjacency in both directions and per-slot edge groups are built lazily
    and cached; the graph itself is immutable.
    """

    def __init__(self, dst, src, slot, point_count: int, slot_count: int):
        dst = np.asarray(dst, dtype=np.int64)
        src = np.asarray(src, dtype=np.int64)
        slot = np.asarray(slot, dtype=np.int64)
        if not (dst.shape == src.shape == slot.shape):
            raise ValueError("edge arrays must have equal length")
        order = np.lexsort((src, dst))
        self.dst = _ro(dst[order])
        self.src = _ro(src[order])
        self.slot = _ro(slot[order])
        self.point_count = int(point_count)
        self.slot_count = int(slot_count)
        if self.num_edges:
            if self.slot.min() < 0 or self.slot.max() >= self.slot_count:
                raise ValueError("slot index out of range")
            if self.dst.min() < 0 or self.dst.max() >= self.point_count:
                raise ValueError("dst index out of range")
            if self.src.min() < 0 or self.src.max() >= self.point_count:
                raise ValueError("src index out of range")
        # CSR-style offsets: in-edges of dst d are rows dst_ptr[d]:dst_ptr[d+1]
        counts = np.bincount(self.dst, minlength=self.point_count)
        self.dst_ptr = _ro(np.concatenate([[0], np.cumsum(counts)]).astype(np.int64))
        self._cache: dict = {}

    @property
    def num_edges(self) -> int:
        return self.dst.size

    # -- adjacency -----------------------------------------------------

    def in_edges(self, dst: int) -> list[tuple[int, int]]:
        """(src, slot) pairs of the edges arriving at dst, in src order."""
        if not 0 <= dst < self.point_count:
            raise IndexError(f"dst index {dst} out of range [0, {self.point_count})")
        lo, hi = self.dst_ptr[dst], self.dst_ptr[dst + 1]
        return list(zip(self.src[lo:hi].tolist(), self.slot[lo:hi].tolist()))

    def out_edges(self, src: int) -> list[tuple[int, int]]:
        """(dst, slot) pairs of the edges leaving src, in dst order."""
        if not 0 <= src < self.point_count:
            raise IndexError(f"src index {src} out of range [0, {self.point_count})")
        order, ptr = self._out_adjacency()
        lo, hi = ptr[src], ptr[src + 1]
        rows = order[lo:hi]
        return list(zip(self.dst[rows].tolist(), self.slot[rows].tolist()))

    def _out_adjacency(self):
        if "out" not in self._cache:
            order = np.lexsort((self.dst, self.src))
            counts = np.bincount(self.src, minlength=self.point_count)
            ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
            self._cache["out"] = (order, ptr)
        return self._cache["out"]

    def edges_by_slot(self) -> list[list[tuple[int, int]]]:
        """Partition of the edge list by kernel slot, as (dst, src) pairs."""
        return [
            list(zip(d.tolist(), s.tolist())) for d, s in
            (self.slot_edges(k) for k in range(self.slot_count))
        ]

    def slot_edges(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(dst, src) index arrays of the edges allocated to slot k."""
        if "by_slot" not in self._cache:
            groups = []
            for s in range(self.slot_count):
                rows = np.flatnonzero(self.slot == s)
                groups.append((_ro(self.dst[rows]), _ro(self.src[rows])))
            self._cache["by_slot"] = groups
        return self._cache["by_slot"][k]

    # -- sparse views (one 0/1 adjacency matrix per slot) ---------------

    def slot_matrix(self, k: int) -> sparse.csr_matrix:
        """P x P matrix with a 1 at (dst, src) for each edge in slot k."""
        if "csr" not in self._cache:
            mats = []
            for s in range(self.slot_count):
                d, srcs = self.slot_edges(s)
                m = sparse.csr_matrix(
                    (np.ones(d.size), (d, srcs)),
                    shape=(self.point_count, self.point_count),
                )
                mats.append(m)
            self._cache["csr"] = mats
        return self._cache["csr"][k]

    def slot_matrix_t(self, k: int) -> sparse.csr_matrix:
        """Transpose of slot_matrix(k), in CSR form."""
        if "csr_t" not in self._cache:
            self._cache["csr_t"] = [
                self.slot_matrix(s).T.tocsr() for s in range(self.slot_count)
            ]
        return self._cache["csr_t"][k]

    def slot_stack(self) -> sparse.csr_matrix:
        """All slot matrices stacked vertically: (n*P) x P, block k = slot k."""
        if "stack" not in self._cache:
            self._cache["stack"] = sparse.vstack(
                [self.slot_matrix(s) for s in range(self.slot_count)], format="csr"
            )
        return self._cache["stack"]

    def slot_stack_t(self) -> sparse.csr_matrix:
        """All transposed slot matrices side by side: P x (n*P)."""
        if "stack_t" not in self._cache:
            self._cache["stack_t"] = sparse.hstack(
                [self.slot_matrix_t(s) for s in range(self.slot_count)], format="csr"
            )
        return self._cache["stack_t"]

    # -- debugging -------------------------------------------------------

    def dump_text(self) -> str:
        """Edge list as sorted text lines ``dst src slot``."""
        return "\n".join(
            f"{d} {s} {k}" for d, s, k in zip(self.dst, self.src, self.slot)
        ) + ("\n" if self.num_edges else "")


def _ro(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _as_coords(points) -> np.ndarray:
    coords = np.asarray(
        [(p[0], p[1]) for p in points] if not isinstance(points, np.ndarray) else points,
        dtype=np.float64,
    ).reshape(-1, 2)
    if not np.all(np.isfinite(coords)):
        raise ValueError("point coordinates must be finite")
    return coords


def build_rect_graph(points, window: RectWindow) -> ReceptiveGraph:
    """Build the receptive graph of a point set under a rectangular window.

    Uses a uniform spatial hash with cell side max(2p+1, 2q+1) * mu, so any
    source inside a destination's window is found in the 3 x 3 block of hash
    cells around the destination. Output is canonical: edges sorted by
    (dst, src), independent of hash iteration order.
    """
    coords = _as_coords(points)
    n = coords.shape[0]
    p, q, mu = window.p, window.q, window.mu
    w = 2 * p + 1
    if n == 0:
        return ReceptiveGraph([], [], [], 0, window.slot_count)

    cell = max(2 * p + 1, 2 * q + 1) * mu
    keys = np.floor(coords / cell).astype(np.int64)  # (n, 2) hash cell per point
    buckets: dict[tuple[int, int], np.ndarray] = {}
    for key, idx in zip(map(tuple, keys), range(n)):
        buckets.setdefault(key, []).append(idx)  # type: ignore[arg-type]
    buckets = {k: np.asarray(v, dtype=np.int64) for k, v in buckets.items()}

    dsts, srcs, slots = [], [], []
    for (kx, ky), dst_idx in buckets.items():
        neigh = [
            buckets[(kx + ox, ky + oy)]
            for ox in (-1, 0, 1)
            for oy in (-1, 0, 1)
            if (kx + ox, ky + oy) in buckets
        ]
        cand = np.concatenate(neigh)
        # offsets of every candidate source relative to every destination
        dx = coords[cand, 0][None, :] - coords[dst_idx, 0][:, None]
        dy = coords[cand, 1][None, :] - coords[dst_idx, 1][:, None]
        col = np.floor(dx / mu + p + 0.5).astype(np.int64)
        row = np.floor(dy / mu + q + 0.5).astype(np.int64)
        ok = (col >= 0) & (col <= 2 * p) & (row >= 0) & (row <= 2 * q)
        di, ci = np.nonzero(ok)
        dsts.append(dst_idx[di])
        srcs.append(cand[ci])
        slots.append(col[ok] + w * row[ok])

    return ReceptiveGraph(
        np.concatenate(dsts), np.concatenate(srcs), np.concatenate(slots),
        point_count=n, slot_count=window.slot_count,
    )
