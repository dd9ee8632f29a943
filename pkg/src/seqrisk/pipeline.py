"""Manifest -> model-ready arrays: segmentation, stacking, radiomics and fold-wise scaling."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import read_image
from .model import PatientSet
from .preprocess import VIEWS, compute_stats, normalize, preprocess_view, stack_screenings
from .radiomics import N_FEATURES, extract_all


@dataclass
class RawCohort:
    """Segmented, resized (not yet normalized) videos plus patient metadata."""
    ids: list
    videos: np.ndarray  # P x 4 x T x S x S, most recent screening first
    masks: np.ndarray  # P x 4 x S x S breast masks of the current exam
    age: np.ndarray
    label: np.ndarray
    category: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def load_cohort(manifest: dict, root, size: int = 64, frames: int = 2, fill: str = "oldest") -> RawCohort:
    root = Path(root)
    ids, videos, masks, age, label, category = [], [], [], [], [], []
    for p in manifest["patients"]:
        exams = sorted(p["exams"], key=lambda e: e["screening_index"])
        per_view, cur_masks = [], []
        for v in VIEWS:
            processed = [preprocess_view(read_image(root / ex["views"][v]), size) for ex in exams[:frames]]
            per_view.append(stack_screenings([img for img, _ in processed], frames, fill))
            cur_masks.append(processed[0][1])
        ids.append(p["id"])
        videos.append(np.stack(per_view))
        masks.append(np.stack(cur_masks))
        age.append(p["age_category"])
        label.append(p["label"])
        category.append(p["category"])
    return RawCohort(ids, np.stack(videos), np.stack(masks), np.array(age, dtype=np.float64),
                     np.array(label, dtype=int), np.array(category, dtype=int))


def _patient_features(images, masks, n_bins):
    return np.stack([extract_all(img, m, n_bins).values for img, m in zip(images, masks)])


def cohort_radiomics(raw: RawCohort, n_bins: int = 32, workers: int = 1) -> np.ndarray:
    """``P x 4 x 122`` features of the current exam of every view.

    With ``workers > 1`` patients are spread over a process pool; results are
    collected in patient order, so the output does not depend on ``workers``.
    """
    jobs = [(raw.videos[i, :, 0], raw.masks[i], n_bins) for i in range(len(raw))]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_patient_features, *zip(*jobs), chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        rows = [_patient_features(*job) for job in jobs]
    return np.stack(rows).reshape(len(raw), len(VIEWS), N_FEATURES)


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, features: np.ndarray) -> "Standardizer":
        flat = features.reshape(-1, features.shape[-1])
        return cls(flat.mean(axis=0), flat.std(axis=0))

    def transform(self, features: np.ndarray) -> np.ndarray:
        live = self.std > 1e-12 * np.maximum(1.0, np.abs(self.mean))
        z = np.zeros_like(features, dtype=np.float64)
        z[..., live] = (features[..., live] - self.mean[live]) / self.std[live]
        return z


def prepare(raw: RawCohort, features: np.ndarray, train_idx, fold_id: int = 0):
    """Scale pixels and radiomics with statistics of the training patients only.

    Returns the full ``PatientSet`` plus the fitted pixel stats and feature standardizer.
    """
    train_idx = np.asarray(train_idx, dtype=np.int64)
    stats = compute_stats([raw.videos[train_idx]], fold_id)
    scaler = Standardizer.fit(features[train_idx])
    data = PatientSet(list(raw.ids), normalize(raw.videos, stats), scaler.transform(features), raw.age.copy(),
                      raw.label.copy(), raw.category.copy())
    return data, stats, scaler


def with_frames(data: PatientSet, frames: int) -> PatientSet:
    """Keep only the ``frames`` most recent screenings."""
    if not 1 <= frames <= data.frames:
        raise ValueError(f"frames must be in [1, {data.frames}], got {frames}")
    return PatientSet(data.ids, np.ascontiguousarray(data.videos[:, :, :frames]), data.radiomics, data.age,
                      data.label, data.category, data.y_soft, data.gamma)
