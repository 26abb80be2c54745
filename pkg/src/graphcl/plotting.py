"""Report figures written to files (non-interactive backend)."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_length_buckets(buckets: dict[str, dict], path: str | Path, title: str = "R-1 by findings length") -> Path:
    labels = list(buckets)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(range(len(labels)), [buckets[k]["rouge1"] for k in labels], marker="o")
    for i, k in enumerate(labels):
        ax.annotate(f"n={buckets[k]['count']}", (i, buckets[k]["rouge1"]), textcoords="offset points",
                    xytext=(0, 6), ha="center", fontsize=8)
    ax.set_xticks(range(len(labels)), labels, rotation=20)
    ax.set_xlabel("findings length (words)")
    ax.set_ylabel("ROUGE-1 F1")
    ax.set_title(title)
    return _save(fig, path)


def plot_ablation(records: Sequence[dict], path: str | Path) -> Path:
    """Grouped bars of R-1/R-2/R-L per variant; failed variants are drawn as empty slots."""
    metrics = ("rouge1", "rouge2", "rougeL")
    names = [r["model"] for r in records]
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for j, m in enumerate(metrics):
        vals = [r[m] if r[m] is not None else 0.0 for r in records]
        ax.bar([i + (j - 1) * width for i in range(len(names))], vals, width, label=m.replace("rouge", "R-"))
    ax.set_xticks(range(len(names)), names)
    ax.set_ylabel("F1")
    ax.legend()
    return _save(fig, path)


def plot_loss_curve(history: Sequence[dict], path: str | Path) -> Path:
    steps = [h["step"] for h in history]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for key, label in (("L", "L"), ("l_ge", "l_ge"), ("l_con", "l_con")):
        ax.plot(steps, [h[key] for h in history], label=label)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)
