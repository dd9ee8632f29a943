"""Fixed-order 122-element radiomics feature vector for one view image.

Order: 18 first-order, 23 GLCM, 16 GLSZM, 16 GLRLM, 5 NGTDM, 14 GLDM,
15 DCT-map and 15 FFT-map statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .firstorder import FIRSTORDER_NAMES, QuantizedImage, first_order, quantize
from .frequency import FREQUENCY_NAMES, dct2, fft2, frequency_features
from .texture import (
    GLCM_NAMES, GLDM_NAMES, GLRLM_NAMES, GLSZM_NAMES, NGTDM_NAMES,
    glcm_features, gldm_features, glrlm_features, glszm_features, ngtdm_features,
)

FAMILIES = (
    ("firstorder", FIRSTORDER_NAMES),
    ("glcm", GLCM_NAMES),
    ("glszm", GLSZM_NAMES),
    ("glrlm", GLRLM_NAMES),
    ("ngtdm", NGTDM_NAMES),
    ("gldm", GLDM_NAMES),
    ("dct", FREQUENCY_NAMES),
    ("fft", FREQUENCY_NAMES),
)
FEATURE_NAMES = tuple(f"{fam}_{name}" for fam, names in FAMILIES for name in names)
N_FEATURES = len(FEATURE_NAMES)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple = FEATURE_NAMES

    def __post_init__(self):
        if self.values.shape != (N_FEATURES,):
            raise ValueError(f"feature vector must have {N_FEATURES} entries, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            bad = [n for n, v in zip(self.names, self.values) if not np.isfinite(v)]
            raise ValueError(f"non-finite features: {bad}")

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))


def extract_all(img, mask, n_bins: int = 32) -> FeatureVector:
    """Texture features use the masked region; frequency maps use the whole image."""
    img = np.asarray(img, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    q = quantize(img, mask, n_bins)
    parts = [
        first_order(img, mask, n_bins),
        glcm_features(q),
        glszm_features(q),
        glrlm_features(q),
        ngtdm_features(q),
        gldm_features(q),
        frequency_features(dct2(img), n_bins),
        frequency_features(fft2(img), n_bins),
    ]
    return FeatureVector(np.concatenate(parts))


__all__ = [
    "FEATURE_NAMES", "N_FEATURES", "FeatureVector", "QuantizedImage", "dct2", "extract_all",
    "fft2", "first_order", "frequency_features", "glcm_features", "gldm_features",
    "glrlm_features", "glszm_features", "ngtdm_features", "quantize",
]
