"""Report figures written next to the delimited stage outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes stable across runs
_PNG_META = {"Software": None}


def plot_confusion(report, path, title="Issue ontology classification"):
    from .classifier import CLASSES

    M = np.asarray(report.confusion)
    names = [c.value for c in CLASSES]
    fig, ax = plt.subplots(figsize=(4.8, 4.2))
    im = ax.imshow(M, cmap="Blues")
    ax.set_xticks(range(len(names)), names, rotation=30, ha="right")
    ax.set_yticks(range(len(names)), names)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("Gold")
    ax.set_title(f"{title}\naccuracy {report.accuracy:.2f}")
    thresh = M.max() / 2 if M.size and M.max() else 0.5
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            ax.text(j, i, str(int(M[i, j])), ha="center", va="center",
                    color="white" if M[i, j] > thresh else "black")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_silhouettes(scores: dict[int, float], chosen: int, path):
    ks = sorted(scores)
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.plot(ks, [scores[k] for k in ks], marker="o", color="#1f77b4")
    ax.axvline(chosen, color="#d62728", linestyle="--", linewidth=1, label=f"chosen k = {chosen}")
    ax.set_xlabel("number of task clusters k")
    ax.set_ylabel("mean silhouette")
    ax.set_xticks(ks)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120, metadata=_PNG_META)
    plt.close(fig)


def plot_grid(scores: dict[float, float], best: float, path):
    Cs = sorted(scores)
    fig, ax = plt.subplots(figsize=(4.8, 3.2))
    ax.semilogx(Cs, [scores[c] for c in Cs], marker="o")
    ax.axvline(best, color="#d62728", linestyle="--", linewidth=1, label=f"best C = {best:g}")
    ax.set_xlabel("C")
    ax.set_ylabel("mean CV accuracy")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(Path(path), dpi=120, metadata=_PNG_META)
    plt.close(fig)
