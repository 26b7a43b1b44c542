"""The generalized convolution operator over a receptive graph.

The forward map is linear in the input signal: for every destination point v,
every in-edge (u -> v) carrying kernel slot k contributes e_u . W_k^T, where
W_k is the (feature_maps x channels) weight matrix of slot k. Stacked over a
batch this is

    out[b, v, m] = sum over in-edges (u, k) of v:  sum_c  in[b, u, c] * W[m, c, k]

The backward pass is the exact adjoint: input gradients flow along out-edges
through the same slot matrices transposed, weight gradients accumulate
delta[dst] x input[src] over each slot's edge set, and the bias gradient is
the plain sum of the incoming deltas (the bias itself is applied downstream,
fused with the activation, so the forward here is bias-free).

Implementation note: edges are grouped by slot, and each group acts as a 0/1
sparse P x P matrix, so forward/backward reduce to one sparse-dense product
per slot plus small dense contractions. Results are deterministic for a
fixed graph.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .domain import Batch
from .receptive import ReceptiveGraph


@dataclass(frozen=True)
class Kernel:
    """Shared weights: (feature_maps F, channels C, slots n) plus F biases."""

    weights: np.ndarray  # (F, C, n)
    bias: np.ndarray  # (F,)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if w.ndim != 3:
            raise ValueError(f"weights must be (F, C, n), got shape {w.shape}")
        if b.shape != (w.shape[0],):
            raise ValueError(f"bias must be ({w.shape[0]},), got {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValueError("kernel parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def feature_maps(self) -> int:
        return self.weights.shape[0]

    @property
    def channels(self) -> int:
        return self.weights.shape[1]

    @property
    def slots(self) -> int:
        return self.weights.shape[2]


@dataclass(frozen=True)
class ConvGradients:
    d_weights: np.ndarray  # (F, C, n)
    d_bias: np.ndarray  # (F,)
    d_input: np.ndarray  # (B, P, C)


def init_kernel(feature_maps: int, channels: int, slots: int, rng: np.random.Generator) -> Kernel:
    """Seeded uniform init on +-sqrt(6 / (C*n + F*n)); zero bias."""
    bound = np.sqrt(6.0 / (channels * slots + feature_maps * slots))
    w = rng.uniform(-bound, bound, size=(feature_maps, channels, slots))
    return Kernel(weights=w, bias=np.zeros(feature_maps))


def _values_of(batch) -> np.ndarray:
    vals = batch.values if isinstance(batch, Batch) else np.asarray(batch, dtype=np.float64)
    if vals.ndim != 3:
        raise ValueError(f"batch values must be (B, P, C), got shape {vals.shape}")
    return vals


def _check_shapes(values: np.ndarray, graph: ReceptiveGraph, kernel: Kernel) -> None:
    if values.shape[1] != graph.point_count:
        raise ValueError(
            f"point count mismatch: batch has {values.shape[1]}, graph has {graph.point_count}"
        )
    if kernel.slots != graph.slot_count:
        raise ValueError(
            f"slot count mismatch: kernel has {kernel.slots}, graph has {graph.slot_count}"
        )
    if values.shape[2] != kernel.channels:
        raise ValueError(
            f"channel mismatch: batch has {values.shape[2]}, kernel has {kernel.channels}"
        )


def _gather_by_slot(values: np.ndarray, graph: ReceptiveGraph) -> np.ndarray:
    """Per-destination source sums, one block per slot.

    Returns (P*B, C*n): entry [p*B + b, c*n + k] is the sum of values[b, u, c]
    over the slot-k sources u of destination p.
    """
    B, P, C = values.shape
    n = graph.slot_count
    vt = np.ascontiguousarray(values.transpose(1, 0, 2)).reshape(P, B * C)
    stacked = graph.slot_stack() @ vt  # (n*P, B*C)
    return np.ascontiguousarray(
        stacked.reshape(n, P, B, C).transpose(1, 2, 3, 0)
    ).reshape(P * B, C * n)


def conv_forward(batch, graph: ReceptiveGraph, kernel: Kernel) -> np.ndarray:
    """Pre-activation output (B, P, F). Bias is NOT added here."""
    values = _values_of(batch)
    _check_shapes(values, graph, kernel)
    B, P, C = values.shape
    F = kernel.feature_maps
    gathered = _gather_by_slot(values, graph)  # (P*B, C*n)
    out = gathered @ kernel.weights.reshape(F, -1).T  # (P*B, F)
    return np.ascontiguousarray(out.reshape(P, B, F).transpose(1, 0, 2))


def conv_backward(batch, graph: ReceptiveGraph, kernel: Kernel, upstream: np.ndarray) -> ConvGradients:
    """Gradients for upstream = dLoss/d(pre-activation), shape (B, P, F).

    The caller owns the activation derivative: upstream must already include
    it when the layer output passes through a nonlinearity.
    """
    values = _values_of(batch)
    _check_shapes(values, graph, kernel)
    upstream = np.asarray(upstream, dtype=np.float64)
    B, P, C = values.shape
    F = kernel.feature_maps
    if upstream.shape != (B, P, F):
        raise ValueError(f"upstream must be {(B, P, F)}, got {upstream.shape}")

    n = kernel.slots
    W2 = kernel.weights.reshape(F, C * n)
    ut = np.ascontiguousarray(upstream.transpose(1, 0, 2)).reshape(P * B, F)

    # input gradient: transpose adjacency routes deltas back to the sources
    spread = (ut @ W2).reshape(P, B, C, n)  # delta times W, per slot
    spread = np.ascontiguousarray(spread.transpose(3, 0, 1, 2)).reshape(n * P, B * C)
    d_in = (graph.slot_stack_t() @ spread).reshape(P, B, C)

    # weight gradient: delta at dst against input gathered from srcs
    gathered = _gather_by_slot(values, graph)  # (P*B, C*n)
    d_weights = (ut.T @ gathered).reshape(F, C, n)

    d_bias = upstream.sum(axis=(0, 1))
    return ConvGradients(
        d_weights=d_weights,
        d_bias=d_bias,
        d_input=np.ascontiguousarray(d_in.transpose(1, 0, 2)),
    )


def conv_forward_partitioned(batch, graph: ReceptiveGraph, kernel: Kernel, parts: int) -> np.ndarray:
    """conv_forward with the edge set partitioned by destination.

    Each part computes the output rows of a contiguous destination block from
    the corresponding rows of the slot matrices; blocks are disjoint, so the
    concatenated result matches the unpartitioned pass up to floating-point
    reassociation. Exists to pin down the parallelization contract.
    """
    values = _values_of(batch)
    _check_shapes(values, graph, kernel)
    B, P, C = values.shape
    F = kernel.feature_maps
    if parts < 1:
        raise ValueError("parts must be >= 1")
    vt = np.ascontiguousarray(values.transpose(1, 0, 2)).reshape(P, B * C)
    out_t = np.zeros((P, B, F))
    bounds = np.linspace(0, P, parts + 1).astype(int)
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        if lo == hi:
            continue
        block = np.zeros((hi - lo, B, F))
        for k in range(kernel.slots):
            S = graph.slot_matrix(k)[lo:hi]
            if S.nnz == 0:
                continue
            block += (S @ vt).reshape(hi - lo, B, C) @ kernel.weights[:, :, k].T
        out_t[lo:hi] = block
    return np.ascontiguousarray(out_t.transpose(1, 0, 2))


def materialize_dense(graph: ReceptiveGraph, kernel_row, point_count: int | None = None) -> np.ndarray:
    """Dense P x P operator of a single-slot-vector kernel (test oracle).

    M[i, j] = kernel_row[slot] when edge (dst=i, src=j, slot) exists, else 0.
    """
    w = np.asarray(kernel_row, dtype=np.float64).reshape(-1)
    if w.size != graph.slot_count:
        raise ValueError(f"kernel row must have {graph.slot_count} weights, got {w.size}")
    P = graph.point_count if point_count is None else int(point_count)
    M = np.zeros((P, P))
    M[graph.dst, graph.src] = w[graph.slot]
    return M


def bilinear_graph_conv(f, g, graph: ReceptiveGraph) -> np.ndarray:
    """Bilinear form between a slot vector f (length n) and a signal g over V.

    (f * g)(v) = sum over in-edges (u, k) of v:  f[k] * g[u] -- the same
    operator as conv_forward with f as a one-channel, one-map kernel.
    """
    f = np.asarray(f, dtype=np.float64).reshape(-1)
    if f.size != graph.slot_count:
        raise ValueError(f"f must have length {graph.slot_count}, got {f.size}")
    g = np.asarray(g, dtype=np.float64).reshape(-1)
    if g.size != graph.point_count:
        raise ValueError(f"g must have length {graph.point_count}, got {g.size}")
    out = np.zeros(graph.point_count)
    np.add.at(out, graph.dst, f[graph.slot] * g[graph.src])
    return out


# ---------------------------------------------------------------------------
# Kernel checkpoint format: magic "GCK1", little-endian u32 dims F, C, n,
# then F*C*n f64 weights, then F f64 biases.
# ---------------------------------------------------------------------------

_MAGIC = b"GCK1"


def save_kernel(kernel: Kernel, path) -> None:
    F, C, n = kernel.weights.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIII", _MAGIC, F, C, n))
        fh.write(kernel.weights.astype("<f8").tobytes())
        fh.write(kernel.bias.astype("<f8").tobytes())


def load_kernel(path) -> Kernel:
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) != 16:
            raise ValueError(f"{path}: truncated kernel checkpoint header")
        magic, F, C, n = struct.unpack("<4sIII", head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
        body = fh.read(8 * (F * C * n + F))
        if len(body) != 8 * (F * C * n + F):
            raise ValueError(f"{path}: truncated kernel checkpoint body")
    weights = np.frombuffer(body[: 8 * F * C * n], dtype="<f8").reshape(F, C, n).copy()
    bias = np.frombuffer(body[8 * F * C * n:], dtype="<f8").copy()
    return Kernel(weights=weights, bias=bias)
