"""Deterministic synthetic longitudinal four-view cohort with planted unilateral signal.

Each exam has four views of half-ellipse breasts filled with band-limited
texture on a near-black background, sometimes with a bright corner marker.
Cases carry a Gaussian blob in one breast that grows toward the current exam.
With ``signal_strength = 0`` cases and controls are drawn from the same
distribution (including age).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .io import write_image
from .preprocess import VIEWS

CATEGORY_AMPLITUDE = {1: 1.0, 2: 0.75, 3: 0.5}
AGE1_CONTROL, AGE1_CASE = 0.49, 0.37
BLOB_BASE_AMPLITUDE = 60.0
GROWTH_PER_SCREENING = 0.5


@dataclass(frozen=True)
class CohortConfig:
    n_patients: int = 400
    case_fraction: float = 0.10
    category_mix: tuple = (0.60, 0.25, 0.15)
    screenings_distribution: tuple = (0.3, 0.3, 0.4)
    image_size: int = 64
    signal_strength: float = 1.0
    marker_probability: float = 0.3
    image_format: str = "rdf"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "category_mix", tuple(self.category_mix))
        object.__setattr__(self, "screenings_distribution", tuple(self.screenings_distribution))
        if self.n_patients < 20:
            raise ValueError(f"n_patients must be >= 20, got {self.n_patients}")
        if not 0 < self.case_fraction < 1:
            raise ValueError(f"case_fraction must be in (0, 1), got {self.case_fraction}")
        for name in ("category_mix", "screenings_distribution"):
            v = getattr(self, name)
            if abs(sum(v) - 1) > 1e-9 or min(v) < 0:
                raise ValueError(f"{name} must be non-negative and sum to 1, got {v}")
        if len(self.category_mix) != 3:
            raise ValueError("category_mix needs three entries (categories 1, 2, 3)")
        if self.signal_strength < 0:
            raise ValueError("signal_strength must be >= 0")
        if self.image_size < 16 or self.image_format not in ("rdf", "pgm"):
            raise ValueError("image_size must be >= 16 and image_format 'rdf' or 'pgm'")


def _apportion(total: int, fractions) -> list[int]:
    """Largest-remainder rounding of ``total * fractions``."""
    raw = np.asarray(fractions) * total
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: total - counts.sum()]:
        counts[i] += 1
    return counts.tolist()


def _breast_mask(h, w, view, rng):
    """Half ellipse against the chest wall: left breasts on the left edge, right breasts mirrored."""
    yy, xx = np.mgrid[:h, :w]
    mlo = view.endswith("MLO")
    cy = h * (0.45 if mlo else 0.5) + rng.normal(0, 0.02 * h)
    ay = h * (0.46 if mlo else 0.40) * rng.uniform(0.92, 1.05)
    ax = w * 0.78 * rng.uniform(0.88, 1.0)
    mask = ((yy - cy) / ay) ** 2 + (xx / ax) ** 2 < 1.0
    if mlo:
        mask |= (xx < 0.12 * w) & (yy < cy)  # pectoral strip along the upper chest wall
    return mask if view.startswith("L") else mask[:, ::-1]


def _texture(h, w, rng):
    field = ndimage.gaussian_filter(rng.normal(size=(h, w)), 2.0, mode="wrap")
    return field / field.std()


def _blob(h, w, cy, cx, radius):
    yy, xx = np.mgrid[:h, :w]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * radius ** 2))


def _patient(cfg: CohortConfig, index: int, label: int, category: int):
    rng = np.random.default_rng([cfg.seed, index])
    s = cfg.signal_strength
    p_age1 = AGE1_CONTROL + (AGE1_CASE - AGE1_CONTROL) * min(s, 1.0) * label
    age = 1 if rng.random() < p_age1 else 2
    n_exams = int(rng.choice([1, 2, 3], p=cfg.screenings_distribution))
    h, w = int(round(cfg.image_size * 1.25)), cfg.image_size
    masks = {v: _breast_mask(h, w, v, rng) for v in VIEWS}
    base = {v: _texture(h, w, rng) for v in VIEWS}
    density = rng.uniform(90, 130)  # shared by both breasts

    truth = None
    if label == 1:
        side = "L" if rng.random() < 0.5 else "R"
        centres = {}
        for v in VIEWS:
            if v[0] != side:
                continue
            ys, xs = np.nonzero(ndimage.binary_erosion(masks[v], iterations=max(2, w // 8)))
            k = rng.integers(len(ys))
            centres[v] = (float(ys[k]), float(xs[k]))
        radius0 = w * rng.uniform(0.12, 0.18)
        amp0 = BLOB_BASE_AMPLITUDE * s * CATEGORY_AMPLITUDE[category]
        truth = {"side": side, "centres": centres,
                 "radius": [radius0 * (1 - 0.2 * e) for e in range(n_exams)],
                 "amplitude": [amp0 * GROWTH_PER_SCREENING ** e for e in range(n_exams)]}

    exams = []
    for e in range(n_exams):  # e = 0 is the current exam, larger e are older priors
        views = {}
        for v in VIEWS:
            tex = 0.85 * base[v] + 0.15 * _texture(h, w, rng)
            img = density + 25.0 * tex
            if truth is not None and v in truth["centres"]:
                cy, cx = truth["centres"][v]
                img = img + truth["amplitude"][e] * _blob(h, w, cy, cx, truth["radius"][e])
            img = np.where(masks[v], np.clip(img, 30.0, 250.0), np.abs(rng.normal(0, 2.0, size=(h, w))))
            if rng.random() < cfg.marker_probability:
                mw, mh = max(2, w // 10), max(2, h // 16)
                x0 = w - mw - 2 if v.startswith("L") else 2
                img[2:2 + mh, x0:x0 + mw] = 255.0
            views[v] = np.round(img)
        exams.append(views)
    return age, exams, truth


def generate(config: CohortConfig, out_dir) -> dict:
    """Write images plus ``manifest.json`` under ``out_dir``; returns the manifest."""
    out_dir = Path(out_dir)
    n_cases = int(round(config.case_fraction * config.n_patients))
    order = np.random.default_rng([config.seed, 2 ** 31]).permutation(config.n_patients)
    labels = np.zeros(config.n_patients, dtype=int)
    labels[order[:n_cases]] = 1
    cats = np.zeros(config.n_patients, dtype=int)
    counts = _apportion(n_cases, config.category_mix)
    cats[order[:n_cases]] = np.repeat([1, 2, 3], counts)

    patients = []
    suffix = "." + config.image_format
    for i in range(config.n_patients):
        pid = f"P{i:05d}"
        age, exams, truth = _patient(config, i, int(labels[i]), int(cats[i]))
        rec_exams = []
        for e, views in enumerate(exams):
            paths = {}
            for v, img in views.items():
                rel = Path("images") / pid / f"s{e}_{v}{suffix}"
                (out_dir / rel).parent.mkdir(parents=True, exist_ok=True)
                write_image(out_dir / rel, img)
                paths[v] = rel.as_posix()
            rec_exams.append({"screening_index": e, "views": paths})
        patients.append({"id": pid, "label": int(labels[i]), "category": int(cats[i]), "age_category": age,
                         "exams": rec_exams, "truth": truth})
    manifest = {"config": asdict(config), "patients": patients}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed manifest JSON ({exc})") from exc
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: dict) -> None:
    if not isinstance(manifest.get("patients"), list) or not manifest["patients"]:
        raise ValueError("manifest needs a non-empty 'patients' list")
    for p in manifest["patients"]:
        for key in ("id", "label", "category", "age_category", "exams"):
            if key not in p:
                raise ValueError(f"patient {p.get('id', '?')}: missing field {key!r}")
        if p["label"] not in (0, 1) or p["category"] not in (0, 1, 2, 3) or (p["label"] == 0) != (p["category"] == 0):
            raise ValueError(f"patient {p['id']}: inconsistent label/category {p['label']}/{p['category']}")
        if not p["exams"]:
            raise ValueError(f"patient {p['id']}: no exams")
        for ex in p["exams"]:
            missing = set(VIEWS) - set(ex.get("views", {}))
            if missing:
                raise ValueError(f"patient {p['id']}: exam {ex.get('screening_index')} lacks views {sorted(missing)}")


def describe(manifest: dict) -> dict:
    pts = manifest["patients"]
    return {
        "n_patients": len(pts),
        "by_label": {str(k): v for k, v in sorted(Counter(p["label"] for p in pts).items())},
        "by_category": {str(k): v for k, v in sorted(Counter(p["category"] for p in pts).items())},
        "by_age": {str(k): v for k, v in sorted(Counter(p["age_category"] for p in pts).items())},
        "screenings_histogram": {str(k): v for k, v in sorted(Counter(len(p["exams"]) for p in pts).items())},
    }
