"""Static figures rendered from sweep CSVs and training histories."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "axes.labelsize": 11,
    "axes.titlesize": 12,
    "font.size": 10,
    "legend.fontsize": 9,
    "lines.linewidth": 1.8,
    "figure.figsize": (5.0, 3.4),
    "axes.spines.top": False,
    "axes.spines.right": False,
}

_LABELS = {"num_envs": "number of environments", "K": "number of profiles K",
           "lambda2": r"regularizer weight $\lambda_2$", "beta": r"prior weight $\beta$"}


def read_sweep(path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def plot_sweep(csv_path, out_path, metrics=("recall@20", "ndcg@20")) -> Path:
    """Metric-vs-value line chart of a one-parameter sweep."""
    rows = read_sweep(csv_path)
    param = rows[0]["param"]
    xs = [float(r["value"]) for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for m in metrics:
            ax.plot(xs, [float(r[m]) for r in rows], marker="o", label=m)
        ax.set_xlabel(_LABELS.get(param, param))
        ax.set_ylabel("test metric")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return Path(out_path)


def plot_history(history: list[dict], out_path, cutoff: int = 20) -> Path:
    key = f"val_recall@{cutoff}"
    epochs = [r["epoch"] for r in history]
    with plt.rc_context(STYLE):
        fig, ax1 = plt.subplots()
        ax1.plot(epochs, [r["loss_total"] for r in history], color="tab:gray", label="training loss")
        ax1.set_xlabel("epoch")
        ax1.set_ylabel("training loss")
        ax2 = ax1.twinx()
        ax2.plot(epochs, [r[key] for r in history], color="tab:blue", label=key)
        ax2.set_ylabel(key)
        fig.tight_layout()
        fig.savefig(out_path, dpi=150)
        plt.close(fig)
    return Path(out_path)
