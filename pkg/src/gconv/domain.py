"""Signals on irregular 2-D point domains.

An entry is a signal sampled at a finite set of points of the plane: each
point carries a stable integer identifier, a coordinate, and a row of channel
values. A batch stacks several entries onto the union of their point sets,
zero-filling the positions an entry does not activate, so a single receptive
graph can serve the whole stack.

All containers are frozen after construction (arrays are marked read-only)
and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class Point(NamedTuple):
    x: float
    y: float


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} must be finite (no NaN/Inf)")


@dataclass(frozen=True)
class Entry:
    """One signal: N identified points with an N x C value matrix."""

    points: tuple[Point, ...]
    values: np.ndarray  # (N, C) f64, read-only
    ids: tuple[int, ...]

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_channels(self) -> int:
        return self.values.shape[1]

    def coords(self) -> np.ndarray:
        """Point coordinates as an (N, 2) float array."""
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64).reshape(-1, 2)


@dataclass(frozen=True)
class Batch:
    """Homogenized stack of entries on one shared point list.

    ``values`` is (B, P, C); ``mask`` is (B, P) and marks which shared points
    each original entry activated. Non-activated positions hold exactly 0.
    """

    points: tuple[Point, ...]
    ids: tuple[int, ...]
    values: np.ndarray  # (B, P, C), read-only
    mask: np.ndarray  # (B, P) bool, read-only

    @property
    def num_entries(self) -> int:
        return self.values.shape[0]

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def num_channels(self) -> int:
        return self.values.shape[2]

    def coords(self) -> np.ndarray:
        return np.array([(p.x, p.y) for p in self.points], dtype=np.float64).reshape(-1, 2)

    def split(self) -> list[Entry]:
        """Recover the member entries (each restricted to its activated points)."""
        out = []
        for b in range(self.num_entries):
            keep = np.flatnonzero(self.mask[b])
            out.append(
                Entry(
                    points=tuple(self.points[i] for i in keep),
                    values=_readonly(self.values[b, keep, :].copy()),
                    ids=tuple(self.ids[i] for i in keep),
                )
            )
        return out


def make_entry(
    points: Sequence[Point | tuple[float, float]],
    values: np.ndarray | Sequence[Sequence[float]],
    ids: Sequence[int] | None = None,
) -> Entry:
    """Build an entry from points and an N x C value matrix.

    Identifiers default to 0..N-1 in point order. Coincident coordinates are
    accepted; identity is carried by the ids, and the graph builder decides
    what edges coincident points get.
    """
    pts = tuple(Point(float(x), float(y)) for x, y in points)
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim == 1:
        vals = vals.reshape(-1, 1)
    if vals.ndim != 2:
        raise ValueError(f"values must be a 2-D matrix, got ndim={vals.ndim}")
    if vals.shape[0] != len(pts):
        raise ValueError(f"length mismatch: {len(pts)} points vs {vals.shape[0]} value rows")
    _check_finite(vals, "values")
    coords = np.array([(p.x, p.y) for p in pts], dtype=np.float64).reshape(-1, 2)
    _check_finite(coords, "point coordinates")
    if ids is None:
        ids = tuple(range(len(pts)))
    else:
        ids = tuple(int(i) for i in ids)
        if len(ids) != len(pts):
            raise ValueError(f"length mismatch: {len(pts)} points vs {len(ids)} ids")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate point identifiers")
    return Entry(points=pts, values=_readonly(vals), ids=ids)


def homogenize(entries: Sequence[Entry]) -> Batch:
    """Stack entries onto the union of their point sets.

    The shared point list is the union of the member entries' points,
    deduplicated by identifier and ordered by ascending id. Positions an
    entry does not activate are zero-filled with mask False. An id must map
    to a single coordinate across the batch; conflicting coordinates for the
    same id are rejected.
    """
    if not entries:
        raise ValueError("cannot homogenize an empty entry list")
    chan = entries[0].num_channels
    for e in entries:
        if e.num_channels != chan:
            raise ValueError(
                f"channel-count mismatch: expected {chan}, got {e.num_channels}"
            )

    id_to_point: dict[int, Point] = {}
    for e in entries:
        for pid, pt in zip(e.ids, e.points):
            seen = id_to_point.get(pid)
            if seen is None:
                id_to_point[pid] = pt
            elif seen != pt:
                raise ValueError(
                    f"point id {pid} has conflicting coordinates {seen} vs {pt}"
                )

    union_ids = tuple(sorted(id_to_point))
    pos = {pid: i for i, pid in enumerate(union_ids)}
    points = tuple(id_to_point[pid] for pid in union_ids)

    B, P = len(entries), len(union_ids)
    values = np.zeros((B, P, chan), dtype=np.float64)
    mask = np.zeros((B, P), dtype=bool)
    for b, e in enumerate(entries):
        idx = np.fromiter((pos[pid] for pid in e.ids), dtype=np.int64, count=len(e.ids))
        values[b, idx, :] = e.values
        mask[b, idx] = True
    return Batch(points=points, ids=union_ids, values=_readonly(values), mask=_readonly(mask))


def batch_from_rows(points: Sequence[Point], values: np.ndarray) -> Batch:
    """Batch of already-homogeneous rows on one shared point list.

    ``values`` is (B, P, C); every position counts as activated. This is the
    fast path for datasets whose entries all live on the same domain.
    """
    pts = tuple(Point(float(x), float(y)) for x, y in points)
    vals = np.asarray(values, dtype=np.float64)
    if vals.ndim != 3 or vals.shape[1] != len(pts):
        raise ValueError(f"values must be (B, {len(pts)}, C), got {vals.shape}")
    _check_finite(vals, "values")
    mask = np.ones(vals.shape[:2], dtype=bool)
    return Batch(
        points=pts,
        ids=tuple(range(len(pts))),
        values=_readonly(vals),
        mask=_readonly(mask),
    )


def regular_grid_entry(width: int, height: int, values) -> Entry:
    """Single-channel entry on the integer lattice (col, row), row-major ids.

    Pixel (col, row) of a width x height image sits at coordinate
    (col, row); ids run row by row, matching flat row-major pixel order.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    vals = np.asarray(values, dtype=np.float64).reshape(-1)
    if vals.size != width * height:
        raise ValueError(f"size mismatch: {width}x{height} grid vs {vals.size} values")
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    points = [Point(float(c), float(r)) for c, r in zip(cols.ravel(), rows.ravel())]
    return make_entry(points, vals.reshape(-1, 1))


def regular_grid_points(width: int, height: int) -> np.ndarray:
    """The (width * height, 2) coordinate array of the integer lattice."""
    cols, rows = np.meshgrid(np.arange(width), np.arange(height))
    return np.stack([cols.ravel(), rows.ravel()], axis=1).astype(np.float64)


# ---------------------------------------------------------------------------
# Point-cloud entry file format (text, one file per entry):
#   header  "gce v1 <N> <C>"
#   N lines "id x y v1 ... vC"
# ---------------------------------------------------------------------------

def write_entry(entry: Entry, path) -> None:
    """Write an entry in the gce v1 text format (17 significant digits)."""
    lines = [f"gce v1 {entry.num_points} {entry.num_channels}"]
    for pid, pt, row in zip(entry.ids, entry.points, entry.values):
        nums = " ".join(f"{v:.17g}" for v in row)
        lines.append(f"{pid} {pt.x:.17g} {pt.y:.17g} {nums}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def read_entry(path) -> Entry:
    """Read an entry from the gce v1 text format."""
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "gce" or header[1] != "v1":
            raise ValueError(f"{path}: not a gce v1 file")
        n, c = int(header[2]), int(header[3])
        ids, points, values = [], [], np.zeros((n, c), dtype=np.float64)
        for i in range(n):
            parts = fh.readline().split()
            if len(parts) != 3 + c:
                raise ValueError(f"{path}: line {i + 2}: expected {3 + c} fields, got {len(parts)}")
            ids.append(int(parts[0]))
            points.append(Point(float(parts[1]), float(parts[2])))
            values[i] = [float(v) for v in parts[3:]]
    return make_entry(points, values, ids=ids)
