"""Seeded end-to-end study on synthetic cohorts: the ablations behind the directional checks.

One call generates a planted-signal cohort and a zero-signal twin, extracts
features, splits patients, trains the baseline plus its variants (single
screening, additive attention, asymmetry-filtered finetuning) and scores each
on the held-out test split.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .backbone import BackboneConfig
from .cohort import CohortConfig, generate
from .evaluation import auc, split
from .model import ModelConfig, PatientSet, RiskModel
from .pipeline import cohort_radiomics, load_cohort, prepare, with_frames
from .training import TrainConfig, pseudo_label, train, two_stage_finetune

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class StudyConfig:
    n_patients: int = 400
    case_fraction: float = 0.5
    image_size: int = 64
    frames: int = 2
    signal_strength: float = 1.0
    seed: int = 0
    epochs: int = 10
    learning_rate: float = 1e-3
    batch_patients: int = 12
    filter_percentile: float = 90.0
    backbone: BackboneConfig = field(default_factory=lambda: BackboneConfig(
        stem_channels=8, layer_channels=(8, 16), blocks_per_layer=1, embed_dim=16))


@dataclass
class Arm:
    """One trained variant: test-set AUC plus the raw scores behind it."""
    name: str
    auc: float
    scores: np.ndarray
    seconds: float
    loss: list


def cohort_arrays(cfg: StudyConfig, root, signal_strength: float):
    root = Path(root)
    man = generate(CohortConfig(n_patients=cfg.n_patients, case_fraction=cfg.case_fraction,
                                image_size=cfg.image_size, signal_strength=signal_strength, seed=cfg.seed), root)
    raw = load_cohort(man, root, size=cfg.image_size, frames=cfg.frames)
    return raw, cohort_radiomics(raw)


def _train_arm(name, data: PatientSet, train_idx, test_idx, model_cfg, train_cfg) -> tuple[Arm, RiskModel]:
    t0 = time.perf_counter()
    model = RiskModel(model_cfg, seed=train_cfg.seed)
    lg = train(model, data.subset(train_idx), train_cfg, stage=name)
    y, _ = model.predict(data.subset(test_idx))
    arm = Arm(name, auc(y, data.label[test_idx]), y, time.perf_counter() - t0, lg.epoch_loss)
    log.info("%s: test AUC %.4f (%.1fs)", name, arm.auc, arm.seconds)
    return arm, model


def run_study(cfg: StudyConfig, workdir) -> dict:
    """Train every arm; returns ``{"arms": {name: Arm}, "test_ids": [...], "labels": ...}``."""
    workdir = Path(workdir)
    train_cfg = TrainConfig(epochs=cfg.epochs, batch_patients=cfg.batch_patients, learning_rate=cfg.learning_rate,
                            seed=cfg.seed, filter_percentile=cfg.filter_percentile)
    base_model = ModelConfig(backbone=cfg.backbone)
    arms = {}
    out = {}
    for tag, strength in (("signal", cfg.signal_strength), ("null", 0.0)):
        raw, feats = cohort_arrays(cfg, workdir / f"cohort_{tag}", strength)
        plan = split(raw.ids, raw.label, seed=cfg.seed)
        index = {pid: i for i, pid in enumerate(raw.ids)}
        test_idx = np.array(sorted(index[p] for p in plan.test))
        train_idx = np.array(sorted(index[p] for f in plan.folds for p in f))
        data, _, _ = prepare(raw, feats, train_idx)
        if tag == "null":
            arms["null"], _ = _train_arm("null", data, train_idx, test_idx, base_model, train_cfg)
            continue
        out.update(test_ids=[raw.ids[i] for i in test_idx], labels=data.label[test_idx],
                   categories=data.category[test_idx])
        arms["baseline"], baseline = _train_arm("baseline", data, train_idx, test_idx, base_model, train_cfg)
        arms["single_screening"], _ = _train_arm("single_screening", with_frames(data, 1), train_idx, test_idx,
                                                 base_model, train_cfg)
        shift_model = replace(base_model, backbone=replace(cfg.backbone, shift_layer=1))
        arms["shift"], _ = _train_arm("shift", data, train_idx, test_idx, shift_model, train_cfg)

        # pseudo-label with the trained baseline, then retrain from scratch in two stages
        t0 = time.perf_counter()
        d_s = pseudo_label(baseline, data.subset(train_idx))
        test = data.subset(test_idx)
        stage1 = {}

        def score_stage1(m):
            y, _ = m.predict(test)
            stage1["scores"] = y

        fresh = RiskModel(base_model, seed=cfg.seed)
        fresh.calibrate(data.subset(train_idx), seed=cfg.seed)
        model, logs = two_stage_finetune(fresh, d_s, train_cfg, after_stage1=score_stage1)
        y, _ = model.predict(test)
        secs = time.perf_counter() - t0
        arms["stage1"] = Arm("stage1", auc(stage1["scores"], test.label), stage1["scores"], secs, logs[0].epoch_loss)
        arms["finetuned"] = Arm("finetuned", auc(y, test.label), y, secs, logs[0].epoch_loss + logs[1].epoch_loss)
        out["gamma"] = {"case": float(d_s.gamma[d_s.label == 1].mean()),
                        "control": float(d_s.gamma[d_s.label == 0].mean())}
        out["gamma_values"] = (d_s.gamma, d_s.label)
    out["arms"] = arms
    return out


def summary(result: dict) -> dict:
    """JSON-ready numbers from ``run_study``."""
    arms = result["arms"]
    return {
        "auc": {k: a.auc for k, a in arms.items()},
        "loss": {k: a.loss for k, a in arms.items()},
        "gamma_mean": result.get("gamma"),
        "checks": {
            "signal_auc_at_least_0.85": arms["baseline"].auc >= 0.85,
            "null_auc_at_most_0.57": arms["null"].auc <= 0.57,
            "two_screenings_not_worse": arms["baseline"].auc >= arms["single_screening"].auc - 0.01,
            "attention_not_worse": arms["shift"].auc >= arms["baseline"].auc - 0.01,
            "finetune_not_worse": arms["finetuned"].auc >= arms["stage1"].auc - 0.02,
        },
    }


def study_config_dict(cfg: StudyConfig) -> dict:
    return asdict(cfg)
