"""Segmentation, resizing, normalization and temporal stacking of view images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import DegenerateInputError

VIEWS = ("LCC", "RCC", "LMLO", "RMLO")


@dataclass(frozen=True)
class NormalizationStats:
    mean: float
    std: float
    fold_id: int = 0

    def __post_init__(self):
        if not self.std > 0:
            raise DegenerateInputError(f"normalization std must be > 0, got {self.std}")


def otsu_threshold(img: np.ndarray, n_levels: int = 256) -> tuple[float, np.ndarray]:
    """Otsu threshold on the min-max scaled histogram.

    Returns the threshold in image units (the largest value of the lower
    class) and the raw above-threshold mask before component filtering.
    """
    img = np.asarray(img, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if not hi > lo:
        raise DegenerateInputError("otsu_segment needs at least two distinct pixel values")
    bins = np.minimum(((img - lo) / (hi - lo) * n_levels).astype(np.int64), n_levels - 1)
    hist = np.bincount(bins.ravel(), minlength=n_levels).astype(np.float64)
    p = hist / hist.sum()
    levels = np.arange(n_levels, dtype=np.float64)
    w0 = np.cumsum(p)[:-1]
    m0 = np.cumsum(p * levels)[:-1]
    mu_t = float((p * levels).sum())
    w1 = 1.0 - w0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = (mu_t * w0 - m0) ** 2 / (w0 * w1)
    between[(w0 <= 0) | (w1 <= 0)] = -np.inf
    t = int(np.argmax(between))  # first maximum: lowest threshold wins ties
    upper = bins > t
    threshold = float(img[~upper].max())
    return threshold, img > threshold


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep the largest 4-connected component (lowest label on size ties)."""
    labels, n = ndimage.label(mask)
    if n == 0:
        return np.zeros_like(mask, dtype=bool)
    sizes = np.bincount(labels.ravel())[1:]
    return labels == (int(np.argmax(sizes)) + 1)


def otsu_segment(img: np.ndarray, n_levels: int = 256) -> tuple[float, np.ndarray, np.ndarray]:
    """Return ``(threshold, mask, cleaned image)``; pixels outside the mask are zeroed."""
    threshold, above = otsu_threshold(img, n_levels)
    mask = largest_component(above)
    return threshold, mask, np.where(mask, img, 0.0)


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling with half-pixel centres and edge clamping."""
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(np.int64)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(h, out_h)
    x0, x1, fx = axis(w, out_w)
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bot = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy)[:, None] + bot * fy[:, None]


def resize_pad(img: np.ndarray, target: int = 256) -> np.ndarray:
    """Resize so the longer side equals ``target``, zero-pad the shorter side.

    Padding is symmetric; the odd extra pixel goes to the trailing side.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape
    scale = target / max(h, w)
    nh = target if h >= w else max(1, int(round(h * scale)))
    nw = target if w >= h else max(1, int(round(w * scale)))
    content = img if (nh, nw) == (h, w) else bilinear_resize(img, nh, nw)
    out = np.zeros((target, target))
    top = (target - nh) // 2
    left = (target - nw) // 2
    out[top:top + nh, left:left + nw] = content
    return out


def compute_stats(images, fold_id: int = 0) -> NormalizationStats:
    images = list(images)
    if not images:
        raise DegenerateInputError("compute_stats needs at least one training image")
    total = sum(float(np.sum(im)) for im in images)
    count = sum(np.size(im) for im in images)
    mean = total / count
    sq = sum(float(np.sum((np.asarray(im) - mean) ** 2)) for im in images)
    std = float(np.sqrt(sq / count))
    if std == 0:
        raise DegenerateInputError("training pixels are constant; std == 0")
    return NormalizationStats(mean, std, fold_id)


def normalize(img, stats: NormalizationStats) -> np.ndarray:
    return (np.asarray(img, dtype=np.float64) - stats.mean) / stats.std


def denormalize(img, stats: NormalizationStats) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) * stats.std + stats.mean


def stack_screenings(frames, T: int, fill: str = "oldest") -> np.ndarray:
    """Stack most-recent-first frames into a ``T x H x W`` video.

    Missing slots repeat the oldest available frame (``fill="oldest"``) or the
    current one (``fill="current"``).  Extra screenings beyond ``T`` are dropped.
    """
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise ValueError("stack_screenings needs at least one screening")
    if fill not in ("oldest", "current"):
        raise ValueError(f"fill must be 'oldest' or 'current', not {fill!r}")
    chosen = frames[:T]
    pad = frames[-1] if fill == "oldest" else frames[0]
    chosen = chosen + [pad] * (T - len(chosen))
    return np.stack(chosen)


def preprocess_view(img: np.ndarray, size: int = 64, n_levels: int = 256):
    """Segment, then resize/pad.  Returns ``(image, mask)`` at ``size x size``."""
    _, _, cleaned = otsu_segment(img, n_levels)
    out = resize_pad(cleaned, size)
    return out, out > 0
