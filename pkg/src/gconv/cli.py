"""Command-line interface.

Commands: train, sweep, gradcheck, check-equivalence, distort, inspect-graph.
Exit codes: 0 success, 1 flag/validation error, 2 runtime failure. All
randomness is controlled by --seed flags; repeated single-threaded runs
write byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(1)


def _mnist_dir(value: str | None) -> Path:
    path = value or os.environ.get("GCONV_MNIST_DIR")
    if not path:
        raise ValueError(
            "no MNIST directory: pass --mnist or set GCONV_MNIST_DIR"
        )
    return Path(path)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mnist", help="directory with the IDX files (or $GCONV_MNIST_DIR)")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--sigma", type=float, default=0.0, help="displacement std-dev in mu units")
    p.add_argument("--distort-mode", choices=["shared", "per-entry"], default="shared")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--train-size", type=int, default=5000)
    p.add_argument("--test-size", type=int, default=1000)
    p.add_argument("--p", type=int, default=2, help="window half-width in cells")
    p.add_argument("--q", type=int, default=2, help="window half-height in cells")
    p.add_argument("--mu", type=float, default=1.0, help="unit scale")
    p.add_argument("--feature-maps", type=int, default=20)
    p.add_argument("--pool-side", type=float, default=2.0)
    p.add_argument("--hidden", type=int, default=500)
    p.add_argument("--match-params", action="store_true",
                   help="widen the MLP hidden layers to the gcnn parameter budget")
    p.add_argument("--threads", type=int, default=1, help="worker threads per run")


def _experiment_config(args, model: str):
    from .bench import DistortionSpec, ExperimentConfig
    from .optim import SgdConfig

    return ExperimentConfig(
        model=model,
        distortion=DistortionSpec(sigma=args.sigma, seed=args.seed, mode=args.distort_mode),
        sgd=SgdConfig(
            learning_rate=args.lr, momentum=args.momentum, l2=args.l2,
            batch_size=args.batch, epochs=args.epochs, seed=args.seed,
        ),
        train_size=args.train_size, test_size=args.test_size,
        feature_maps=args.feature_maps, window_p=args.p, window_q=args.q,
        mu=args.mu, pool_side=args.pool_side, hidden=args.hidden,
        match_params=args.match_params, threads=args.threads,
    )


def cmd_train(args) -> int:
    from . import report
    from .bench import PARITY_NOTE, load_mnist, run_experiment

    mnist = load_mnist(_mnist_dir(args.mnist))
    cfg = _experiment_config(args, args.model)
    print(f"training {cfg.model} at sigma={args.sigma:g} "
          f"({cfg.train_size} train / {cfg.test_size} test, {cfg.sgd.epochs} epochs)")
    result = run_experiment(
        mnist, cfg, args.out,
        on_epoch=lambda m: print(
            f"  epoch {m.epoch}: train_loss={m.train_loss:.4f} test_error={m.test_error:.4f}"
        ),
    )
    report.save_learning_curves(
        result.metrics, result.run_dir / "learning_curves.png",
        title=f"{result.model} sigma={result.sigma:g}",
    )
    print(f"params: {result.params:,}")
    print(PARITY_NOTE)
    print(f"wrote {result.run_dir}/metrics.csv")
    return 0


def cmd_sweep(args) -> int:
    from . import report
    from .bench import PARITY_NOTE, load_mnist, run_sweep, write_summary_csv

    mnist = load_mnist(_mnist_dir(args.mnist))
    sigmas = [float(s) for s in args.sigmas.split(",") if s != ""]
    models = [m.strip() for m in args.models.split(",") if m != ""]
    for m in models:
        if m not in ("gcnn", "mlp"):
            raise ValueError(f"unknown model {m!r}")
    base = _experiment_config(args, models[0])
    out = Path(args.out)
    print(f"sweep over sigma={sigmas} models={models} (jobs={args.jobs})")
    rows = run_sweep(mnist, base, sigmas, models, out, jobs=args.jobs, log=print)
    out.mkdir(parents=True, exist_ok=True)
    write_summary_csv(rows, out / "summary.csv")
    report.save_sweep_summary(rows, out / "summary.png")
    print(PARITY_NOTE)
    print(f"wrote {out}/summary.csv and {out}/summary.png")
    return 0


def cmd_gradcheck(args) -> int:
    from .fdcheck import run_all

    results = run_all(seeds=range(args.instances), tolerance=args.tolerance)
    worst = 0.0
    failed = 0
    for r in results:
        worst = max(worst, r.rel_error)
        status = "ok" if r.passed else "FAIL"
        if not r.passed or args.verbose:
            print(f"  [{status}] {r.name}: rel_error={r.rel_error:.3e}")
        failed += 0 if r.passed else 1
    print(f"gradcheck: {len(results) - failed}/{len(results)} passed, "
          f"worst rel_error={worst:.3e} (tolerance {args.tolerance:g})")
    return 0 if failed == 0 else 2


def cmd_check_equivalence(args) -> int:
    from .bench import check_standard_equivalence

    report = check_standard_equivalence(args.seed, trials=args.trials, p=args.p, q=args.q)
    print(f"max abs diff over {report.trials} trials "
          f"(window {2 * report.p + 1}x{2 * report.q + 1}): {report.max_abs_diff:.3e}")
    return 0 if report.passed else 2


def cmd_distort(args) -> int:
    from .bench import load_mnist
    from .domain import Point, make_entry, write_entry
    from .bench import distort_domain
    from .domain import regular_grid_points

    grid = regular_grid_points(args.width, args.height)
    rng = np.random.default_rng(args.seed)
    displaced = distort_domain(grid, args.sigma, rng)
    if args.mnist is not None or args.index != 0:
        mnist = load_mnist(_mnist_dir(args.mnist))
        values = mnist.train_images[args.index].reshape(-1, 1)
    else:
        values = np.zeros((grid.shape[0], 1))
    entry = make_entry([Point(x, y) for x, y in displaced], values)
    write_entry(entry, args.out)
    print(f"wrote {entry.num_points} displaced points (sigma={args.sigma:g}) to {args.out}")
    return 0


def cmd_inspect_graph(args) -> int:
    from .domain import read_entry, regular_grid_points
    from .receptive import RectWindow, build_rect_graph

    if args.entry is not None:
        coords = read_entry(args.entry).coords()
    else:
        coords = regular_grid_points(args.width, args.height)
    window = RectWindow(args.p, args.q, args.mu)
    graph = build_rect_graph(coords, window)
    degrees = np.diff(graph.dst_ptr)
    print(f"points: {graph.point_count}")
    print(f"edges: {graph.num_edges}")
    print(f"slots: {graph.slot_count}")
    if graph.point_count:
        print(f"in-degree: min={degrees.min()} mean={degrees.mean():.2f} max={degrees.max()}")
        print(f"slots in use: {np.unique(graph.slot).size}/{graph.slot_count}")
    if args.out is not None:
        Path(args.out).write_text(graph.dump_text(), encoding="ascii")
        print(f"wrote edge dump to {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(
        prog="gconv",
        description="Generalized convolution on irregular point domains: "
                    "training, benchmarks, and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one model on (optionally distorted) MNIST")
    p.add_argument("--model", choices=["gcnn", "mlp"], default="gcnn")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train a grid of (sigma, model) runs and summarize")
    p.add_argument("--sigmas", default="0,0.25,0.5,1.0,2.0")
    p.add_argument("--models", default="gcnn,mlp")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs")
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient path")
    p.add_argument("--instances", type=int, default=20, help="seeded instances per check")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0, help="unused; all instances are pre-seeded")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("check-equivalence",
                       help="regular-grid generalized conv vs dense zero-padded conv")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--q", type=int, default=2)
    p.set_defaults(func=cmd_check_equivalence)

    p = sub.add_parser("distort", help="write a displaced-lattice entry file (gce v1)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--width", type=int, default=28)
    p.add_argument("--height", type=int, default=28)
    p.add_argument("--mnist", help="fill values from this MNIST directory")
    p.add_argument("--index", type=int, default=0, help="training image to use with --mnist")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("inspect-graph", help="build a receptive graph and print statistics")
    p.add_argument("--entry", help="gce v1 file to read points from")
    p.add_argument("--width", type=int, default=28)
    p.add_argument("--height", type=int, default=28)
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--q", type=int, default=2)
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--out", help="write the sorted edge dump here")
    p.set_defaults(func=cmd_inspect_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
