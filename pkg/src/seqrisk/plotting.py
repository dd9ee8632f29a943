"""Figures written straight to PNG files (Agg backend, no display needed)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def roc_curves(curves: dict, path, title: str = "ROC") -> Path:
    """``curves`` maps a label to ``(points, auc)`` with ``points`` a list of ``(fpr, tpr)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.2, 4.0))
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        for name, (points, area) in curves.items():
            x, y = zip(*points)
            ax.plot(x, y, drawstyle="default", lw=1.4, label=f"{name} (AUC {area:.3f})")
        ax.set(xlabel="false positive rate", ylabel="true positive rate", xlim=(0, 1), ylim=(0, 1.01), title=title)
        ax.set_aspect("equal")
        ax.legend(loc="lower right", fontsize=8)
        return _save(fig, path)


def loss_curves(logs: dict, path) -> Path:
    """``logs`` maps a label to per-epoch mean training loss."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.8, 3.2))
        for name, losses in logs.items():
            ax.plot(np.arange(1, len(losses) + 1), losses, marker="o", ms=3, lw=1.2, label=name)
        ax.set(xlabel="epoch", ylabel="training BCE")
        ax.legend()
        return _save(fig, path)


def attention_map(image, weights, path, points=None, title: str = "") -> Path:
    """Overlay an ``H x W`` attention map (upsampled to the image) on a grayscale frame."""
    image = np.asarray(image, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    sy, sx = image.shape[0] / weights.shape[0], image.shape[1] / weights.shape[1]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.6))
        ax.imshow(image, cmap="gray")
        ax.imshow(weights, cmap="inferno", alpha=0.45, interpolation="nearest",
                  extent=(-0.5, image.shape[1] - 0.5, image.shape[0] - 0.5, -0.5))
        for y, x in points or ():
            ax.plot((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5, "c+", ms=9, mew=1.5)
        ax.set_axis_off()
        ax.set_title(title)
        return _save(fig, path)


def mac_scaling(n_values, shift_macs, nonlocal_macs, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.4, 3.2))
        ax.loglog(n_values, nonlocal_macs, "o-", label="non-local")
        ax.loglog(n_values, shift_macs, "s-", label="additive")
        ax.set(xlabel="positions n", ylabel="MACs")
        ax.legend()
        return _save(fig, path)


def screenings_histogram(hist: dict, path) -> Path:
    keys = sorted(hist, key=int)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 2.8))
        ax.bar([str(k) for k in keys], [hist[k] for k in keys], color="0.35")
        ax.set(xlabel="screenings per patient", ylabel="patients")
        return _save(fig, path)


def auc_bars(aucs: dict, path, reference: float | None = None) -> Path:
    names = list(aucs)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(max(3.5, 0.9 * len(names)), 3.0))
        ax.bar(names, [aucs[k] for k in names], color="0.4")
        if reference is not None:
            ax.axhline(reference, color="C3", lw=0.8, ls="--")
        ax.set(ylabel="test AUC", ylim=(0.0, 1.0))
        ax.tick_params(axis="x", rotation=30)
        return _save(fig, path)
