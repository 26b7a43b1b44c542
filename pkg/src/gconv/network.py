"""Layers and their composition into trainable networks.

The stack mirrors an ordinary CNN, lifted to irregular domains:

  * GConvLayer      -- generalized convolution over a receptive graph
  * ReluBiasLayer   -- per-feature-map bias fused with ReLU, g = max(0, f + b)
  * MaxPoolLayer    -- spatial max pooling over a fixed patch grid; the number
                       of points per patch may vary (and may be zero)
  * DenseLayer      -- fully connected (flattens trailing dims)
  * SoftmaxXent     -- softmax + cross-entropy head

Every layer exposes forward(x) -> y (caching what backward needs),
backward(upstream) -> (downstream, grads), a params list, and clone(), which
shares parameter arrays but gives the clone its own caches so concurrent
workers can run forward/backward on the same weights.

Geometry (graphs, pooling plans) is bound per domain by NetworkTemplate:
build a template once, then instantiate a network for each point layout.
All instances share one set of master parameter arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .conv import Kernel, conv_backward, conv_forward, init_kernel
from .domain import Point, regular_grid_points
from .receptive import RectWindow, ReceptiveGraph, build_rect_graph

DEFAULT_POOL_ORIGIN = Point(-0.5, -0.5)


# ---------------------------------------------------------------------------
# activation with fused bias
# ---------------------------------------------------------------------------

def relu_bias_forward(pre: np.ndarray, bias: np.ndarray | None) -> np.ndarray:
    """max(0, pre + bias), bias broadcast over the last axis (None = no bias)."""
    z = pre if bias is None else pre + bias
    return np.maximum(z, 0.0)


def relu_bias_backward(pre: np.ndarray, bias: np.ndarray | None, upstream: np.ndarray):
    """Returns (delta, d_bias); the ReLU subgradient at 0 is taken as 0."""
    z = pre if bias is None else pre + bias
    delta = np.where(z > 0.0, upstream, 0.0)
    d_bias = None if bias is None else delta.reshape(-1, delta.shape[-1]).sum(axis=0)
    return delta, d_bias


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PoolPlan:
    """Assignment of input points to the half-open cells of a patch grid.

    ``members[j]`` holds the (sorted) input point indices of patch j; patches
    are laid out row-major on an nx x ny grid anchored at ``origin``. Output
    points are the patch centers. Patches may be empty; with ``clamp`` the
    points outside the grid are assigned to the nearest boundary patch, so no
    input value is dropped.
    """

    members: tuple[np.ndarray, ...]
    out_points: np.ndarray  # (Q, 2) patch centers
    nx: int
    ny: int
    origin: Point
    side: float
    clamp: bool

    @property
    def num_patches(self) -> int:
        return self.nx * self.ny


def plan_pool(
    points,
    patch_side: float,
    origin: Point = DEFAULT_POOL_ORIGIN,
    nx: int | None = None,
    ny: int | None = None,
    clamp: bool = True,
) -> PoolPlan:
    """Divide the plane into square patches and bucket the points.

    Patch index of (x, y) is (floor((x-ox)/side), floor((y-oy)/side)). When
    nx/ny are given the grid is fixed (static output size regardless of where
    the points actually sit) and out-of-grid points are clamped to the
    nearest boundary patch; otherwise the grid spans exactly the occupied
    patch index range of the given points.
    """
    if not patch_side > 0:
        raise ValueError("patch_side must be positive")
    coords = np.asarray(
        [(p[0], p[1]) for p in points] if not isinstance(points, np.ndarray) else points,
        dtype=np.float64,
    ).reshape(-1, 2)
    ox, oy = float(origin[0]), float(origin[1])
    ix = np.floor((coords[:, 0] - ox) / patch_side).astype(np.int64)
    iy = np.floor((coords[:, 1] - oy) / patch_side).astype(np.int64)

    if nx is None or ny is None:
        if coords.shape[0] == 0:
            nx, ny = 0, 0
        else:
            # shift the grid so the occupied index range starts at zero
            ox += ix.min() * patch_side
            oy += iy.min() * patch_side
            ix -= ix.min()
            iy -= iy.min()
            nx = int(ix.max()) + 1
            ny = int(iy.max()) + 1
    elif clamp and coords.shape[0]:
        ix = np.clip(ix, 0, nx - 1)
        iy = np.clip(iy, 0, ny - 1)

    flat = iy * nx + ix
    members = []
    for j in range(nx * ny):
        members.append(np.flatnonzero(flat == j).astype(np.int64))
    cx = ox + (np.arange(nx) + 0.5) * patch_side
    cy = oy + (np.arange(ny) + 0.5) * patch_side
    gx, gy = np.meshgrid(cx, cy)
    out_points = np.stack([gx.ravel(), gy.ravel()], axis=1)
    return PoolPlan(
        members=tuple(members),
        out_points=out_points,
        nx=int(nx),
        ny=int(ny),
        origin=Point(ox, oy),
        side=float(patch_side),
        clamp=clamp,
    )


def maxpool_forward(values: np.ndarray, plan: PoolPlan):
    """Max over each patch's member points.

    Returns (pooled (B, Q, F), argmax (B, Q, F) of winning point indices);
    empty patches yield 0 with argmax -1. Ties break to the lowest point
    index (members are sorted; argmax picks the first maximum).
    """
    B, P, F = values.shape
    Q = plan.num_patches
    pooled = np.zeros((B, Q, F))
    argmax = np.full((B, Q, F), -1, dtype=np.int64)
    for j, mem in enumerate(plan.members):
        if mem.size == 0:
            continue
        patch = values[:, mem, :]  # (B, m, F)
        win = np.argmax(patch, axis=1)  # (B, F)
        pooled[:, j, :] = np.take_along_axis(patch, win[:, None, :], axis=1)[:, 0, :]
        argmax[:, j, :] = mem[win]
    return pooled, argmax


def maxpool_backward(upstream: np.ndarray, argmax: np.ndarray, point_count: int) -> np.ndarray:
    """Route each upstream value to the point that won its patch max.

    Patch member sets are disjoint, so the (entry, point, map) targets are
    unique and a plain scatter assignment is safe.
    """
    B, Q, F = upstream.shape
    out = np.zeros((B, point_count, F))
    b_idx, q_idx, f_idx = np.nonzero(argmax >= 0)
    out[b_idx, argmax[b_idx, q_idx, f_idx], f_idx] = upstream[b_idx, q_idx, f_idx]
    return out


# ---------------------------------------------------------------------------
# dense + softmax cross-entropy
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    return x @ weights.T + bias


def dense_backward(x: np.ndarray, weights: np.ndarray, upstream: np.ndarray):
    d_w = upstream.T @ x
    d_b = upstream.sum(axis=0)
    d_x = upstream @ weights
    return d_x, d_w, d_b


def softmax_xent_forward(logits: np.ndarray, labels: np.ndarray):
    """Returns (mean loss, probs). labels are int class indices (B,)."""
    probs = softmax(logits)
    picked = probs[np.arange(logits.shape[0]), labels]
    loss = float(np.mean(-np.log(picked)))
    return loss, probs


def softmax_xent_backward(probs: np.ndarray, labels: np.ndarray, divisor: int | None = None) -> np.ndarray:
    """(probs - onehot) / divisor; divisor defaults to the row count."""
    d = probs.copy()
    d[np.arange(probs.shape[0]), labels] -= 1.0
    return d / (probs.shape[0] if divisor is None else divisor)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class GConvLayer:
    """Generalized convolution bound to one receptive graph (bias-free)."""

    def __init__(self, graph: ReceptiveGraph, weights: np.ndarray):
        self.graph = graph
        self.weights = weights  # (F, C, n), shared across clones
        self._x = None

    @property
    def params(self):
        return [self.weights]

    param_decay = [True]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        kernel = Kernel(weights=self.weights, bias=np.zeros(self.weights.shape[0]))
        return conv_forward(x, self.graph, kernel)

    def backward(self, upstream: np.ndarray):
        kernel = Kernel(weights=self.weights, bias=np.zeros(self.weights.shape[0]))
        grads = conv_backward(self._x, self.graph, kernel, upstream)
        return grads.d_input, [grads.d_weights]

    def clone(self):
        return GConvLayer(self.graph, self.weights)


class ReluBiasLayer:
    """g = max(0, f + bias); owns the per-feature-map bias when given one."""

    def __init__(self, bias: np.ndarray | None):
        self.bias = bias
        self._pre = None

    @property
    def params(self):
        return [] if self.bias is None else [self.bias]

    @property
    def param_decay(self):
        return [] if self.bias is None else [False]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._pre = x
        return relu_bias_forward(x, self.bias)

    def backward(self, upstream: np.ndarray):
        delta, d_bias = relu_bias_backward(self._pre, self.bias, upstream)
        return delta, ([] if self.bias is None else [d_bias])

    def clone(self):
        return ReluBiasLayer(self.bias)


class MaxPoolLayer:
    def __init__(self, plan: PoolPlan, point_count: int):
        self.plan = plan
        self.point_count = point_count
        self._argmax = None

    params: list = []
    param_decay: list = []

    def forward(self, x: np.ndarray) -> np.ndarray:
        pooled, self._argmax = maxpool_forward(x, self.plan)
        return pooled

    def backward(self, upstream: np.ndarray):
        return maxpool_backward(upstream, self._argmax, self.point_count), []

    def clone(self):
        return MaxPoolLayer(self.plan, self.point_count)


class DenseLayer:
    """Fully connected layer; flattens any trailing input dimensions."""

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        self.weights = weights  # (out, in)
        self.bias = bias  # (out,)
        self._x = None
        self._shape = None

    @property
    def params(self):
        return [self.weights, self.bias]

    param_decay = [True, False]

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        x2 = x.reshape(x.shape[0], -1)
        self._x = x2
        return dense_forward(x2, self.weights, self.bias)

    def backward(self, upstream: np.ndarray):
        d_x, d_w, d_b = dense_backward(self._x, self.weights, upstream)
        return d_x.reshape(self._shape), [d_w, d_b]

    def clone(self):
        return DenseLayer(self.weights, self.bias)


class Network:
    """Ordered layer stack with a softmax cross-entropy head."""

    def __init__(self, layers: list):
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward(x), axis=-1)

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray, divisor: int | None = None):
        """One fused pass. Returns (loss summed over rows, grads per param,
        gradient w.r.t. the input).

        ``divisor`` scales the loss gradient (defaults to the row count);
        pass the full minibatch size when accumulating over sub-chunks.
        """
        logits = self.forward(x)
        probs = softmax(logits)
        picked = probs[np.arange(logits.shape[0]), labels]
        loss_sum = float(-np.log(picked).sum())
        upstream = softmax_xent_backward(probs, labels, divisor)
        grads: list[np.ndarray] = []
        for layer in reversed(self.layers):
            upstream, layer_grads = layer.backward(upstream)
            grads = list(layer_grads) + grads
        return loss_sum, grads, upstream

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def param_decay(self) -> list[bool]:
        return [d for layer in self.layers for d in layer.param_decay]

    def clone(self) -> "Network":
        return Network([layer.clone() for layer in self.layers])


def count_params(network: Network | None) -> int:
    """Exact number of scalar weights and biases."""
    if network is None:
        return 0
    return int(sum(p.size for p in network.params))


# ---------------------------------------------------------------------------
# architecture config (key=value text) and templates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NetworkConfig:
    """Architecture description; serializable as key=value text."""

    model: str = "gcnn"  # gcnn | mlp
    input_width: int = 28
    input_height: int = 28
    channels: int = 1
    window_p: int = 2
    window_q: int = 2
    mu: float = 1.0
    feature_maps: tuple[int, ...] = (20,)
    pool_side: float = 2.0
    hidden: tuple[int, ...] = (500,)
    classes: int = 10
    seed: int = 0

    def to_text(self) -> str:
        lines = [
            f"model={self.model}",
            f"input_width={self.input_width}",
            f"input_height={self.input_height}",
            f"channels={self.channels}",
            f"window_p={self.window_p}",
            f"window_q={self.window_q}",
            f"mu={self.mu:.17g}",
            "feature_maps=" + ",".join(str(f) for f in self.feature_maps),
            f"pool_side={self.pool_side:.17g}",
            "hidden=" + ",".join(str(h) for h in self.hidden),
            f"classes={self.classes}",
            f"seed={self.seed}",
        ]
        return "\n".join(lines) + "\n"


def parse_network_config(text: str) -> NetworkConfig:
    """Parse key=value lines; '#' starts a comment; unknown keys are ignored."""
    kv = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line (expected key=value): {raw!r}")
        key, val = line.split("=", 1)
        kv[key.strip()] = val.strip()

    def ints(s):
        return tuple(int(v) for v in s.split(",") if v != "")

    cfg = NetworkConfig()
    if "model" in kv:
        if kv["model"] not in ("gcnn", "mlp"):
            raise ValueError(f"unknown model {kv['model']!r}")
        cfg = replace(cfg, model=kv["model"])
    for key in ("input_width", "input_height", "channels", "window_p", "window_q", "classes", "seed"):
        if key in kv:
            cfg = replace(cfg, **{key: int(kv[key])})
    for key in ("mu", "pool_side"):
        if key in kv:
            cfg = replace(cfg, **{key: float(kv[key])})
    if "feature_maps" in kv:
        cfg = replace(cfg, feature_maps=ints(kv["feature_maps"]))
    if "hidden" in kv:
        cfg = replace(cfg, hidden=ints(kv["hidden"]))
    return cfg


def _dense_init(out_dim: int, in_dim: int, rng: np.random.Generator):
    bound = math.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-bound, bound, size=(out_dim, in_dim)), np.zeros(out_dim)


@dataclass
class _ConvBlockGeom:
    window: RectWindow
    pool_origin: Point
    pool_nx: int
    pool_ny: int
    ref_points: np.ndarray  # where the NEXT block's reference points sit


class NetworkTemplate:
    """Master parameters plus the recipe to bind them to a point layout.

    ``instantiate(points)`` builds a network whose geometry (receptive
    graphs, pooling plans) follows the given points while sharing this
    template's parameter arrays. Passing None uses the undistorted reference
    lattice. For the MLP the points are irrelevant.
    """

    def __init__(self, cfg: NetworkConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.ref_points = regular_grid_points(cfg.input_width, cfg.input_height)
        self.conv_geoms: list[_ConvBlockGeom] = []
        self.kernels: list[np.ndarray] = []
        self.conv_biases: list[np.ndarray] = []
        self.dense_params: list[tuple[np.ndarray, np.ndarray]] = []

        if cfg.model == "gcnn":
            window = RectWindow(cfg.window_p, cfg.window_q, cfg.mu)
            ref = self.ref_points
            channels = cfg.channels
            for fmaps in cfg.feature_maps:
                kernel = init_kernel(fmaps, channels, window.slot_count, rng)
                self.kernels.append(kernel.weights)
                self.conv_biases.append(kernel.bias)
                geom = self._pool_geometry(ref, window)
                self.conv_geoms.append(geom)
                ref = geom.ref_points
                channels = fmaps
            flat = ref.shape[0] * channels
        elif cfg.model == "mlp":
            flat = cfg.input_width * cfg.input_height * cfg.channels
        else:
            raise ValueError(f"unknown model {cfg.model!r}")

        in_dim = flat
        for width in cfg.hidden:
            self.dense_params.append(_dense_init(width, in_dim, rng))
            in_dim = width
        self.dense_params.append(_dense_init(cfg.classes, in_dim, rng))

    def _pool_geometry(self, ref_points: np.ndarray, window: RectWindow) -> _ConvBlockGeom:
        # the patch grid is fixed by the undistorted reference layout, so the
        # pooled output size is static no matter how the points move
        side = self.cfg.pool_side
        ox, oy = DEFAULT_POOL_ORIGIN
        ix = np.floor((ref_points[:, 0] - ox) / side).astype(np.int64)
        iy = np.floor((ref_points[:, 1] - oy) / side).astype(np.int64)
        origin = Point(ox + ix.min() * side, oy + iy.min() * side)
        nx = int(ix.max() - ix.min()) + 1
        ny = int(iy.max() - iy.min()) + 1
        plan = plan_pool(ref_points, side, origin, nx, ny)
        return _ConvBlockGeom(
            window=window, pool_origin=origin, pool_nx=nx, pool_ny=ny,
            ref_points=plan.out_points,
        )

    def instantiate(self, points=None) -> Network:
        cfg = self.cfg
        layers: list = []
        if cfg.model == "gcnn":
            pts = self.ref_points if points is None else np.asarray(points, dtype=np.float64)
            if pts.shape != self.ref_points.shape:
                raise ValueError(
                    f"expected {self.ref_points.shape[0]} points, got {pts.shape[0]}"
                )
            for geom, weights, bias in zip(self.conv_geoms, self.kernels, self.conv_biases):
                graph = build_rect_graph(pts, geom.window)
                layers.append(GConvLayer(graph, weights))
                layers.append(ReluBiasLayer(bias))
                plan = plan_pool(pts, self.cfg.pool_side, geom.pool_origin, geom.pool_nx, geom.pool_ny)
                layers.append(MaxPoolLayer(plan, pts.shape[0]))
                pts = geom.ref_points  # patch centers are fixed grid geometry
        for i, (w, b) in enumerate(self.dense_params):
            layers.append(DenseLayer(w, b))
            if i < len(self.dense_params) - 1:
                layers.append(ReluBiasLayer(None))
        return Network(layers)

    def count_params(self) -> int:
        total = sum(w.size + b.size for w, b in self.dense_params)
        total += sum(k.size for k in self.kernels)
        total += sum(b.size for b in self.conv_biases)
        return int(total)
