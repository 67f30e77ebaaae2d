"""Deterministic SVG charts for ROC curves, calibration and score distributions."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .evaluation import CalibrationTable, RocCurve  # noqa: E402

# fixed ids and no timestamp so reruns produce identical files
plt.rcParams["svg.hashsalt"] = "siterisk"
plt.rcParams["svg.fonttype"] = "none"
_META = {"Date": None, "Creator": "siterisk"}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)
    return path


def plot_roc(curves: Mapping[str, RocCurve], path: str | Path, title: str = "ROC") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.8)
    for name, roc in curves.items():
        ax.plot(roc.fpr, roc.tpr, lw=1.4, label=f"{name} (AUC {roc.auc:.3f})")
    ax.set(xlabel="False positive rate", ylabel="True positive rate", xlim=(0, 1), ylim=(0, 1.01), title=title)
    ax.legend(loc="lower right", fontsize=7)
    return _save(fig, path)


def plot_calibration(table: CalibrationTable, path: str | Path, min_count: int = 1, title: str = "Calibration") -> Path:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([0, 1], [0, 1], ls="--", color="grey", lw=0.8)
    bins = [b for b in table.bins if b.count >= min_count]
    ax.plot([b.mean_predicted for b in bins], [b.empirical_rate for b in bins], marker="o", ms=3, lw=1.2)
    ax.set(xlabel="Predicted probability", ylabel="Observed positive rate", xlim=(0, 1), ylim=(0, 1), title=title)
    return _save(fig, path)


def plot_score_histogram(scores, labels, path: str | Path, n_bins: int = 40, title: str = "Score distribution") -> Path:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    edges = np.linspace(0, 1, n_bins + 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(scores[labels == 0], bins=edges, alpha=0.6, label="negative", density=True)
    ax.hist(scores[labels == 1], bins=edges, alpha=0.6, label="positive", density=True)
    ax.set(xlabel="Predicted probability", ylabel="Density", title=title)
    ax.legend(fontsize=8)
    return _save(fig, path)
