"""DCT/FFT image maps and the statistics computed over them."""

from __future__ import annotations

import numpy as np

from .firstorder import EPS, bin_values

FREQUENCY_NAMES = (
    "Mean", "Maximum", "Variance", "Skew", "Kurtosis", "Entropy", "Energy",
    "Root Mean Square", "Uniformity", "Minimum", "Median", "Range",
    "Interquartile Range", "Mean Absolute Deviation", "Median Absolute Deviation",
)


def dct_basis(n: int) -> np.ndarray:
    """Orthonormal type-II DCT matrix, ``B[m, x] = sqrt(2/n) C(m) cos((2x+1) m pi / 2n)``."""
    m = np.arange(n)[:, None]
    x = np.arange(n)[None, :]
    B = np.sqrt(2.0 / n) * np.cos((2 * x + 1) * m * np.pi / (2 * n))
    B[0] /= np.sqrt(2.0)
    return B


def dct2(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return dct_basis(img.shape[0]) @ img @ dct_basis(img.shape[1]).T


def fft2(img) -> np.ndarray:
    """Magnitude of the unnormalized 2D DFT."""
    return np.abs(np.fft.fft2(np.asarray(img, dtype=np.float64)))


def frequency_features(fmap, n_bins: int = 32) -> np.ndarray:
    """15 statistics over every coefficient of a frequency map.

    Entropy and uniformity use an ``n_bins`` equal-width histogram over the
    coefficient range; skew and kurtosis are 0 for a constant map.
    """
    v = np.asarray(fmap, dtype=np.float64).ravel()
    n = v.size
    mean = v.mean()
    dev = v - mean
    m2 = np.mean(dev ** 2)
    hist = np.bincount(bin_values(v, n_bins), minlength=n_bins + 1)[1:] / n
    q25, median, q75 = np.percentile(v, [25, 50, 75])
    energy = float(np.sum(v ** 2))
    return np.array([
        mean,
        v.max(),
        m2,
        np.mean(dev ** 3) / m2 ** 1.5 if m2 > 0 else 0.0,
        np.mean(dev ** 4) / m2 ** 2 if m2 > 0 else 0.0,
        -np.sum(hist * np.log2(hist + EPS)),
        energy,
        np.sqrt(energy / n),
        np.sum(hist ** 2),
        v.min(),
        median,
        v.max() - v.min(),
        q75 - q25,
        np.mean(np.abs(dev)),
        np.median(np.abs(v - median)),
    ])
