"""Finite-difference verification of every analytic gradient path.

Each check builds a small random instance, computes analytic gradients, and
compares them against central differences of a scalar loss. Instances are
resampled until every ReLU input and every pooling max sits at least a
margin away from its tie point, so the loss is smooth where we probe it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network as nn
from .conv import Kernel, conv_backward, conv_forward, init_kernel
from .domain import Point
from .network import NetworkConfig, NetworkTemplate
from .receptive import RectWindow, build_rect_graph

FD_STEP = 1e-5
TIE_MARGIN = 1e-3


@dataclass(frozen=True)
class CheckResult:
    name: str
    rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.rel_error < self.tolerance


def central_difference(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar f at x, one component at a time."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        keep = xf[i]
        xf[i] = keep + step
        hi = f()
        xf[i] = keep - step
        lo = f()
        xf[i] = keep
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max-norm relative disagreement, safe for all-zero gradients."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    denom = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1e-12)
    return float(np.abs(a - b).max(initial=0.0) / denom)


def _random_cloud(rng, n, lo=0.0, hi=4.0):
    return rng.uniform(lo, hi, size=(n, 2))


def check_conv_layer(seed: int, tolerance: float = 1e-5) -> list[CheckResult]:
    """Weight, bias, and input gradients of a lone conv layer + quadratic loss."""
    rng = np.random.default_rng(seed)
    pts = _random_cloud(rng, 10)
    graph = build_rect_graph(pts, RectWindow(1, 1, 1.0))
    kernel = init_kernel(3, 2, graph.slot_count, rng)
    values = rng.normal(size=(2, 10, 2))

    def loss():
        out = conv_forward(values, graph, kernel)
        return 0.5 * float(np.sum(out * out))

    upstream = conv_forward(values, graph, kernel)  # dL/dout for L = sum(out^2)/2
    grads = conv_backward(values, graph, kernel, upstream)
    fd_w = central_difference(loss, kernel.weights)
    fd_in = central_difference(loss, values)
    return [
        CheckResult(f"conv/d_weights[seed={seed}]", rel_error(grads.d_weights, fd_w), tolerance),
        CheckResult(f"conv/d_input[seed={seed}]", rel_error(grads.d_input, fd_in), tolerance),
    ]


def check_relu_bias(seed: int, tolerance: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    for _ in range(100):
        pre = rng.normal(size=(3, 7, 4))
        bias = rng.normal(size=4) * 0.5
        if np.abs(pre + bias).min() >= TIE_MARGIN:
            break
        seed += 1
        rng = np.random.default_rng(seed)

    def loss():
        out = nn.relu_bias_forward(pre, bias)
        return 0.5 * float(np.sum(out * out))

    upstream = nn.relu_bias_forward(pre, bias)
    delta, d_bias = nn.relu_bias_backward(pre, bias, upstream)
    fd_pre = central_difference(loss, pre)
    fd_bias = central_difference(loss, bias)
    return [
        CheckResult(f"relu_bias/delta[seed={seed}]", rel_error(delta, fd_pre), tolerance),
        CheckResult(f"relu_bias/d_bias[seed={seed}]", rel_error(d_bias, fd_bias), tolerance),
    ]


def check_maxpool(seed: int, tolerance: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    pts = _random_cloud(rng, 12, 0.0, 4.0)
    plan = nn.plan_pool(pts, 2.0, Point(0.0, 0.0), nx=2, ny=2)
    for _ in range(100):
        values = rng.normal(size=(2, 12, 3))
        if _max_gap_ok(values, plan):
            break

    def loss():
        pooled, _ = nn.maxpool_forward(values, plan)
        return 0.5 * float(np.sum(pooled * pooled))

    pooled, argmax = nn.maxpool_forward(values, plan)
    d_in = nn.maxpool_backward(pooled, argmax, 12)
    fd_in = central_difference(loss, values)
    return [CheckResult(f"maxpool/d_input[seed={seed}]", rel_error(d_in, fd_in), tolerance)]


def _max_gap_ok(values, plan) -> bool:
    for mem in plan.members:
        if mem.size < 2:
            continue
        patch = np.sort(values[:, mem, :], axis=1)
        if np.min(patch[:, -1, :] - patch[:, -2, :]) < TIE_MARGIN:
            return False
    return True


def check_dense_softmax(seed: int, tolerance: float = 1e-5) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(3, 6)) * 0.7
    b = rng.normal(size=3) * 0.1
    labels = rng.integers(0, 3, size=4)

    def loss():
        logits = nn.dense_forward(x, w, b)
        return nn.softmax_xent_forward(logits, labels)[0]

    logits = nn.dense_forward(x, w, b)
    _, probs = nn.softmax_xent_forward(logits, labels)
    upstream = nn.softmax_xent_backward(probs, labels)
    d_x, d_w, d_b = nn.dense_backward(x, w, upstream)
    return [
        CheckResult(f"dense/d_weights[seed={seed}]", rel_error(d_w, central_difference(loss, w)), tolerance),
        CheckResult(f"dense/d_bias[seed={seed}]", rel_error(d_b, central_difference(loss, b)), tolerance),
        CheckResult(f"dense/d_input[seed={seed}]", rel_error(d_x, central_difference(loss, x)), tolerance),
    ]


def toy_gcnn_template(seed: int) -> NetworkTemplate:
    """6x6 input, 3x3 window, 3 feature maps, 2x2 pooling, 10 hidden units."""
    cfg = NetworkConfig(
        model="gcnn", input_width=6, input_height=6, channels=1,
        window_p=1, window_q=1, mu=1.0, feature_maps=(3,),
        pool_side=2.0, hidden=(10,), classes=3, seed=seed,
    )
    return NetworkTemplate(cfg)


def check_full_stack(seed: int, tolerance: float = 1e-5) -> list[CheckResult]:
    """End-to-end gradient of every parameter of the toy conv network."""
    rng = np.random.default_rng(seed)
    template = toy_gcnn_template(seed)
    net = template.instantiate()
    labels = rng.integers(0, 3, size=2)
    values = None
    for _ in range(100):
        values = rng.normal(size=(2, 36, 1))
        if _stack_margins_ok(net, values):
            break

    def loss():
        logits = net.forward(values)
        return nn.softmax_xent_forward(logits, labels)[0]

    _, grads, d_input = net.clone().loss_and_grads(values, labels)
    results = []
    names = _param_names(net)
    for p, g, name in zip(net.params, grads, names):
        fd = central_difference(loss, p)
        results.append(CheckResult(f"stack/{name}[seed={seed}]", rel_error(g, fd), tolerance))
    fd_in = central_difference(loss, values)
    results.append(CheckResult(f"stack/d_input[seed={seed}]", rel_error(d_input, fd_in), tolerance))
    return results


def _param_names(net) -> list[str]:
    names = []
    counts: dict[str, int] = {}
    for layer in net.layers:
        kind = type(layer).__name__.replace("Layer", "").lower()
        idx = counts.get(kind, 0)
        counts[kind] = idx + 1
        for j, _ in enumerate(layer.params):
            names.append(f"{kind}{idx}.p{j}")
    return names


def _stack_margins_ok(net, values) -> bool:
    """Forward once and demand a safety margin at every kink."""
    x = values
    for layer in net.layers:
        if isinstance(layer, nn.ReluBiasLayer):
            z = x if layer.bias is None else x + layer.bias
            if np.abs(z).min() < TIE_MARGIN:
                return False
        if isinstance(layer, nn.MaxPoolLayer):
            if not _max_gap_ok(x, layer.plan):
                return False
        x = layer.forward(x)
    return True


def run_all(seeds=range(20), tolerance: float = 1e-5) -> list[CheckResult]:
    """The full gradient suite over the given seeds."""
    results: list[CheckResult] = []
    for s in seeds:
        results.extend(check_conv_layer(1000 + s, tolerance))
        results.extend(check_relu_bias(2000 + s, tolerance))
        results.extend(check_maxpool(3000 + s, tolerance))
        results.extend(check_dense_softmax(4000 + s, tolerance))
        results.extend(check_full_stack(5000 + s, tolerance))
    return results
