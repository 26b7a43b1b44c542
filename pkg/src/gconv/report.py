"""Figure rendering for run reports.

Every figure lands next to the CSV it is drawn from, so a results directory
is self-contained: metrics.csv + learning_curves.png per run, summary.csv +
summary.png per sweep.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_learning_curves(metrics, path, title: str = "") -> None:
    """Train loss and test error per epoch, twin axes."""
    epochs = [m.epoch for m in metrics]
    fig, ax_loss = plt.subplots(figsize=(6, 4))
    ax_err = ax_loss.twinx()
    ax_loss.plot(epochs, [m.train_loss for m in metrics], "o-", color="#0F2080", label="train loss")
    ax_err.plot(epochs, [m.test_error for m in metrics], "s--", color="#F5793A", label="test error")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss", color="#0F2080")
    ax_err.set_ylabel("test error", color="#F5793A")
    if title:
        ax_loss.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_sweep_summary(rows, path) -> None:
    """Final test error vs displacement sigma, one line per model."""
    models = sorted({r.model for r in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    markers = {"gcnn": "o-", "mlp": "s--"}
    colors = {"gcnn": "#0F2080", "mlp": "#F5793A"}
    for model in models:
        pts = sorted((r.sigma, r.final_test_error) for r in rows if r.model == model)
        ax.plot(
            [p[0] for p in pts], [p[1] for p in pts],
            markers.get(model, "^-"), color=colors.get(model), label=model,
        )
    ax.set_xlabel("displacement std-dev (units of mu)")
    ax.set_ylabel("final test error")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
