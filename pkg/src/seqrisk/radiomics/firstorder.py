"""Gray-level quantization and first-order intensity statistics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DegenerateInputError

EPS = 2.0 ** -52

FIRSTORDER_NAMES = (
    "Energy", "Total Energy", "Entropy", "Minimum", "10th Percentile", "90th Percentile",
    "Maximum", "Mean", "Median", "Interquartile Range", "Range", "Mean Absolute Deviation",
    "Robust Mean Absolute Deviation", "Root Mean Squared", "Skewness", "Kurtosis",
    "Variance", "Uniformity",
)


@dataclass(frozen=True)
class QuantizedImage:
    """Integer gray levels in ``[1, n_bins]`` inside ``mask``; 0 outside."""

    levels: np.ndarray
    mask: np.ndarray
    n_bins: int = 32

    def __post_init__(self):
        if not self.mask.any():
            raise DegenerateInputError("quantized image has an empty mask")
        inside = self.levels[self.mask]
        if inside.min() < 1 or inside.max() > self.n_bins:
            raise ValueError("gray levels outside [1, n_bins]")


def _masked_values(img, mask) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if img.shape != mask.shape:
        raise ValueError(f"image {img.shape} and mask {mask.shape} differ in shape")
    if not mask.any():
        raise DegenerateInputError("empty mask")
    x = img[mask]
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite pixel values inside the mask")
    return x


def bin_values(x: np.ndarray, n_bins: int) -> np.ndarray:
    """Equal-width binning of ``x`` over its own [min, max] into 1..n_bins."""
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.ones(x.shape, dtype=np.int64)
    lv = np.floor((x - lo) / (hi - lo) * n_bins).astype(np.int64) + 1
    return np.minimum(lv, n_bins)


def quantize(img, mask, n_bins: int = 32) -> QuantizedImage:
    mask = np.asarray(mask, dtype=bool)
    x = _masked_values(img, mask)
    levels = np.zeros(mask.shape, dtype=np.int64)
    levels[mask] = bin_values(x, n_bins)
    return QuantizedImage(levels, mask, n_bins)


def first_order(img, mask, n_bins: int = 32, voxel_area: float = 1.0) -> np.ndarray:
    x = _masked_values(img, mask)
    n = x.size
    hist = np.bincount(bin_values(x, n_bins), minlength=n_bins + 1)[1:] / n
    mean = x.mean()
    dev = x - mean
    m2 = np.mean(dev ** 2)
    m3 = np.mean(dev ** 3)
    m4 = np.mean(dev ** 4)
    p10, p25, median, p75, p90 = np.percentile(x, [10, 25, 50, 75, 90])
    robust = x[(x >= p10) & (x <= p90)]
    energy = float(np.sum(x ** 2))
    return np.array([
        energy,
        energy * voxel_area,
        -np.sum(hist * np.log2(hist + EPS)),
        x.min(),
        p10,
        p90,
        x.max(),
        mean,
        median,
        p75 - p25,
        x.max() - x.min(),
        np.mean(np.abs(dev)),
        np.mean(np.abs(robust - robust.mean())),
        np.sqrt(energy / n),
        m3 / m2 ** 1.5 if m2 > 0 else 0.0,
        m4 / m2 ** 2 if m2 > 0 else 0.0,
        m2,
        np.sum(hist ** 2),
    ], dtype=np.float64)
