"""Static figures written next to the CSV/JSON reports."""
from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import HorizonTable  # noqa: E402

_STYLE = {"figure.dpi": 100, "axes.grid": True, "grid.alpha": 0.3,
          "axes.spines.top": False, "axes.spines.right": False,
          "svg.hashsalt": "symfore", "path.simplify": False}


def _save(fig, path) -> None:
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def plot_horizon_table(table: HorizonTable, path: str | os.PathLike, title: str = "") -> None:
    """MPJPE against horizon, one line per action plus the average."""
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        hs = list(table.horizons_ms)
        for action, vals in table.rows.items():
            ax.plot(hs, vals, marker="o", lw=1, alpha=0.6, label=action)
        if len(table.rows) > 1:
            ax.plot(hs, table.average(), color="k", lw=2, marker="s", label="average")
        ax.set_xlabel("horizon (ms)")
        ax.set_ylabel("MPJPE (mm)")
        ax.set_title(title or "MPJPE by horizon")
        ax.legend(fontsize=8, frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_npss(rows: dict[str, dict[str, float]], path: str | os.PathLike, title: str = "") -> None:
    """Grouped bars: NPSS per bucket for each action."""
    actions = list(rows)
    buckets = list(next(iter(rows.values()))) if rows else []
    width = 0.8 / max(len(buckets), 1)
    x = np.arange(len(actions))
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(actions) + 2), 4))
        for i, b in enumerate(buckets):
            ax.bar(x + (i - (len(buckets) - 1) / 2) * width, [rows[a][b] for a in actions],
                   width, label=b)
        ax.set_xticks(x, actions, rotation=30, ha="right")
        ax.set_ylabel("NPSS")
        ax.set_title(title or "NPSS by time bucket")
        ax.legend(fontsize=8, frameon=False)
        fig.tight_layout()
        _save(fig, path)


def plot_training(history: list[dict], path: str | os.PathLike) -> None:
    """Train/validation loss per epoch, with the optimiser switch marked."""
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [r["train_loss"] for r in history], label="train")
        if history and "val_loss" in history[0]:
            ax.plot(epochs, [r["val_loss"] for r in history], label="validation")
        for r in history:
            if r["phase"] != r["phase_after"]:
                ax.axvline(r["epoch"], color="grey", ls="--", lw=1, label="switch to SGD")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.legend(fontsize=8, frameon=False)
        fig.tight_layout()
        _save(fig, path)
