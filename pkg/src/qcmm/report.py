"""Run artifacts: metrics.json, history.csv and matplotlib figures."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .fusion import belief_mass  # noqa: E402


def write_metrics(path, metrics, extra: Optional[dict] = None) -> Path:
    payload = metrics.to_dict()
    if extra:
        payload.update(extra)
    path = Path(path)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def write_history(path, history: Sequence[float]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history, start=1):
            w.writerow([i, repr(float(loss))])
    return path


def plot_loss(history: Sequence[float], path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    epochs = np.arange(1, len(history) + 1)
    ax.plot(epochs, history, marker="o", ms=3, lw=1.4)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean cross-entropy")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_confusion(confusion, class_names: Sequence[str], path) -> Path:
    cm = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(cm, cmap="Blues")
    ticks = np.arange(cm.shape[0])
    ax.set_xticks(ticks, class_names, rotation=45, ha="right")
    ax.set_yticks(ticks, class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    limit = cm.max() / 2 if cm.size else 0
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center",
                    color="white" if cm[i, j] > limit else "black", fontsize=8)
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def plot_belief_masses(thetas, path) -> Path:
    masses = belief_mass(np.asarray(thetas, dtype=float))
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.bar(np.arange(masses.size), masses, color="tab:purple")
    ax.set_ylim(0, 1.05)
    ax.set_xlabel("fused feature j")
    ax.set_ylabel(r"belief mass $\sin^2(\theta_j/2)$")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_run(out_dir, metrics=None, history=None, class_names=(), thetas=None) -> list[Path]:
    """Write whichever figures the available data supports; returns their paths."""
    out = Path(out_dir)
    paths = []
    if history:
        paths.append(plot_loss(history, out / "loss.png"))
    if metrics is not None:
        paths.append(plot_confusion(metrics.confusion, class_names, out / "confusion.png"))
    if thetas is not None:
        paths.append(plot_belief_masses(thetas, out / "belief_mass.png"))
    return paths
