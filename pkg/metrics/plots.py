"""
PNG figures for run reports.
"""

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from metrics.scoring import ConfusionMatrix  # noqa: E402
from metrics.sweep import SweepRow  # noqa: E402

FIGSIZE = (6.4, 4.2)
DPI = 150


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return Path(path)


def plot_sweep(rows: Sequence[SweepRow], path: Path, title: str, xlabel: str) -> Path:
    """Macro F1 (both abstain policies) and coverages against the threshold."""
    x = [r.threshold for r in rows]
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.plot(x, [r.macro_f1_exclude for r in rows], marker="o", label="macro F1 (abstained removed)")
    ax.plot(x, [r.macro_f1_miss for r in rows], marker=".", linestyle=":", label="macro F1 (abstained as miss)")
    ax.plot(x, [r.overall_coverage for r in rows], marker="s", linestyle="--", label="overall coverage")
    ax.plot(x, [r.relevant_coverage for r in rows], marker="^", linestyle="--", label="relevant coverage")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("score")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_f1_vs_coverage(curves: Dict[str, Sequence[SweepRow]], path: Path, relevant: bool = False) -> Path:
    """One curve per pipeline: macro F1 against overall (or relevant) coverage."""
    fig, ax = plt.subplots(figsize=FIGSIZE)
    for name, rows in curves.items():
        cov = [r.relevant_coverage if relevant else r.overall_coverage for r in rows]
        ax.plot(cov, [r.macro_f1 for r in rows], marker="o", label=name)
    ax.set_xlabel("relevant coverage" if relevant else "overall coverage")
    ax.set_ylabel("macro F1")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_confusion(m: ConfusionMatrix, path: Path, title: str = "") -> Path:
    """Row-normalized confusion matrix with an extra abstain column."""
    counts = np.hstack([m.matrix, m.abstain_counts[:, np.newaxis]]).astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    shares = np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)
    columns = list(m.names) + ["abstain"]

    fig, ax = plt.subplots(figsize=(1.0 + 0.6 * len(columns), 1.0 + 0.55 * len(m.names)))
    image = ax.imshow(shares, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(columns)), labels=columns, rotation=45, ha="right", fontsize=7)
    ax.set_yticks(range(len(m.names)), labels=list(m.names), fontsize=7)
    for i in range(shares.shape[0]):
        for j in range(shares.shape[1]):
            if counts[i, j]:
                ax.text(j, i, f"{shares[i, j]:.2f}", ha="center", va="center", fontsize=6,
                        color="white" if shares[i, j] > 0.5 else "black")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if title:
        ax.set_title(title)
    fig.colorbar(image, ax=ax, fraction=0.046)
    return _save(fig, path)


def plot_cdf(scores: np.ndarray, cdf: np.ndarray, path: Path, xlabel: str) -> Path:
    fig, ax = plt.subplots(figsize=FIGSIZE)
    ax.step(scores, cdf, where="post")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fraction of misclassified samples")
    ax.grid(alpha=0.3)
    return _save(fig, path)
