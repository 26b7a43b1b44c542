"""Minibatch SGD with Nesterov momentum and L2 regularization.

The update, per parameter array:

    g' = grad + l2 * param        (l2 applies to weights only, not biases)
    v  = momentum * v - lr * g'
    param += momentum * v - lr * g'

Training is deterministic for a fixed seed: the shuffle order, the chunking
of each minibatch, and the reduction order of partial gradients are all
independent of how many worker threads execute the chunks, so a k-thread run
reproduces the single-threaded numbers exactly.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .network import Network

# fixed work-unit sizes: chunk boundaries never depend on the thread count
TRAIN_CHUNK = 32
EVAL_CHUNK = 256


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    l2: float = 1e-4
    batch_size: int = 64
    epochs: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def sgd_step(
    params: Sequence[np.ndarray],
    velocities: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    cfg: SgdConfig,
    decay: Sequence[bool] | None = None,
):
    """One Nesterov-momentum update, in place. Returns (params, velocities).

    The grads arrays are consumed as scratch space.
    """
    if decay is None:
        decay = [True] * len(params)
    lr, m = cfg.learning_rate, cfg.momentum
    for p, v, g, dec in zip(params, velocities, grads, decay):
        if dec and cfg.l2 > 0:
            g += cfg.l2 * p
        g *= lr  # g is now the lr-scaled regularized gradient
        v *= m
        v -= g
        p += m * v
        p -= g
    return params, velocities


@dataclass
class TrainData:
    """Dataset splits; values are (N, P, C) stacks of homogeneous entries.

    When ``train_points``/``test_points`` are given (shape (N, P, 2)), each
    entry lives on its own displaced domain and the network geometry is
    rebuilt per entry; otherwise all entries share the network's domain.
    """

    train_values: np.ndarray
    train_labels: np.ndarray
    test_values: np.ndarray
    test_labels: np.ndarray
    train_points: np.ndarray | None = None
    test_points: np.ndarray | None = None


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    test_error: float


def _work_units(values, labels, points, indices, network_of):
    """Split rows into fixed-size chunks, each with the network to run it.

    Shared domain: contiguous TRAIN_CHUNK-row slices. Per-entry domains: one
    unit per row since every entry carries its own geometry.
    """
    units = []
    if points is None:
        for lo in range(0, indices.size, TRAIN_CHUNK):
            sel = indices[lo: lo + TRAIN_CHUNK]
            units.append((values[sel], labels[sel], network_of(None)))
    else:
        for i in indices:
            units.append((values[i: i + 1], labels[i: i + 1], network_of(points[i])))
    return units


def train(
    network_of: Callable[[np.ndarray | None], Network],
    data: TrainData,
    cfg: SgdConfig,
    threads: int = 1,
    on_epoch: Callable[[EpochMetrics], None] | None = None,
) -> list[EpochMetrics]:
    """Run seeded-minibatch SGD; returns one metrics row per epoch.

    ``network_of(points_or_None)`` supplies the network bound to a domain;
    all returned networks must share the same parameter arrays. Clones are
    made per work unit so chunks can run concurrently.
    """
    n_train = data.train_values.shape[0]
    if n_train == 0:
        raise ValueError("empty training set")
    base = network_of(None if data.train_points is None else data.train_points[0])
    params = base.params
    decay = base.param_decay
    velocities = [np.zeros_like(p) for p in params]

    rng = np.random.default_rng(cfg.seed)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        metrics = []
        for epoch in range(1, cfg.epochs + 1):
            order = rng.permutation(n_train)
            loss_total = 0.0
            for lo in range(0, n_train, cfg.batch_size):
                batch_idx = order[lo: lo + cfg.batch_size]
                units = _work_units(
                    data.train_values, data.train_labels, data.train_points,
                    batch_idx, network_of,
                )
                loss_total += _step(units, batch_idx.size, params, velocities, decay, cfg, pool)
            test_error = evaluate(network_of, data.test_values, data.test_labels,
                                  data.test_points, pool)
            row = EpochMetrics(
                epoch=epoch,
                train_loss=loss_total / n_train,
                test_error=test_error,
            )
            metrics.append(row)
            if on_epoch is not None:
                on_epoch(row)
        return metrics
    finally:
        if pool is not None:
            pool.shutdown()


def _step(units, batch_size, params, velocities, decay, cfg, pool):
    def run(unit):
        values, labels, net = unit
        loss_sum, grads, _ = net.clone().loss_and_grads(values, labels, divisor=batch_size)
        return loss_sum, grads

    results = list(pool.map(run, units)) if pool is not None else [run(u) for u in units]
    loss_sum = results[0][0]
    grads = results[0][1]  # fresh arrays from the first unit: safe to accumulate into
    for part_loss, part_grads in results[1:]:  # fixed reduction order: unit index
        loss_sum += part_loss
        for g, pg in zip(grads, part_grads):
            g += pg
    sgd_step(params, velocities, grads, cfg, decay)
    return loss_sum


def evaluate(network_of, values, labels, points=None, pool=None) -> float:
    """Fraction of rows whose argmax prediction disagrees with the label."""
    n = values.shape[0]
    if n == 0:
        return 0.0
    if points is None:
        units = [
            (values[lo: lo + EVAL_CHUNK], labels[lo: lo + EVAL_CHUNK], network_of(None))
            for lo in range(0, n, EVAL_CHUNK)
        ]
    else:
        units = [(values[i: i + 1], labels[i: i + 1], network_of(points[i])) for i in range(n)]

    def run(unit):
        vals, labs, net = unit
        return int(np.sum(net.clone().predict(vals) != labs))

    wrong = sum(pool.map(run, units)) if pool is not None else sum(run(u) for u in units)
    return wrong / n


def write_metrics_csv(rows: Sequence[EpochMetrics], path) -> None:
    """epoch,train_loss,test_error with full-precision floats."""
    with open(path, "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "test_error"])
        for row in rows:
            writer.writerow([row.epoch, repr(row.train_loss), repr(row.test_error)])
