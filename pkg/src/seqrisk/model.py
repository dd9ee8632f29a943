"""End-to-end risk model: one shared backbone and head applied to all four views."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import heads
from . import tensor as tn
from .backbone import Backbone, BackboneConfig
from .io import load_weights, save_weights
from .preprocess import VIEWS
from .radiomics import N_FEATURES
from .tensor import ShapeError, Tensor


@dataclass
class PatientSet:
    """Model-ready tensors for a group of patients.

    ``videos`` is ``P x 4 x T x H x W`` (normalized), ``radiomics`` is ``P x 4 x F``
    (standardized), views in ``VIEWS`` order.
    """
    ids: list
    videos: np.ndarray
    radiomics: np.ndarray
    age: np.ndarray
    label: np.ndarray
    category: np.ndarray
    y_soft: np.ndarray | None = None
    gamma: np.ndarray | None = None

    def __post_init__(self):
        P = len(self.ids)
        if self.videos.ndim != 5 or self.videos.shape[:2] != (P, len(VIEWS)):
            raise ShapeError(f"videos must be {P} x 4 x T x H x W, got {self.videos.shape}")
        if self.radiomics.shape[:2] != (P, len(VIEWS)):
            raise ShapeError(f"radiomics must be {P} x 4 x F, got {self.radiomics.shape}")
        for name in ("age", "label", "category"):
            if len(getattr(self, name)) != P:
                raise ShapeError(f"{name} has {len(getattr(self, name))} entries for {P} patients")
        bad = (self.category == 0) != (self.label == 0)
        if np.any(bad):
            raise ValueError(f"category 0 must coincide with label 0 (patients {np.asarray(self.ids)[bad][:5]})")

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "PatientSet":
        idx = np.asarray(idx, dtype=np.int64)
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return PatientSet([self.ids[i] for i in idx], self.videos[idx], self.radiomics[idx], self.age[idx],
                          self.label[idx], self.category[idx], pick(self.y_soft), pick(self.gamma))

    @property
    def frames(self) -> int:
        return self.videos.shape[2]


@dataclass(frozen=True)
class ModelConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    n_radiomics: int = N_FEATURES
    combine: str = "gated"
    gate_init: float = 0.6
    gate_fixed: float = 0.4

    def __post_init__(self):
        if self.combine not in ("average", "gated"):
            raise ValueError(f"combine must be 'average' or 'gated', not {self.combine!r}")


class RiskModel:
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.backbone = Backbone(config.backbone, seed)
        rng = np.random.default_rng([seed, 1])
        n_in = config.backbone.embed_dim + config.n_radiomics + 1
        self.head_w = Tensor(rng.normal(0.0, 0.1 / np.sqrt(n_in), size=(n_in, 1)), requires_grad=True)
        self.head_b = Tensor(np.zeros(1), requires_grad=True)
        self.gate = (heads.GateState.from_scales(config.gate_init, config.gate_fixed)
                     if config.combine == "gated" else None)

    @property
    def view_backbones(self) -> dict[str, Backbone]:
        return {v: self.backbone for v in VIEWS}

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"backbone.{k}": v for k, v in self.backbone.params.items()}
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        if self.gate is not None:
            out["gate.w_theta_T"] = self.gate.w_theta_T
            out["gate.w_theta_S"] = self.gate.w_theta_S
        return out

    def named_buffers(self) -> dict[str, np.ndarray]:
        return {f"backbone.{k}": v for k, v in self.backbone.buffers.items()}

    def calibrate(self, data: "PatientSet", n_patients: int = 24, seed: int = 0) -> None:
        """Freeze the backbone's normalization statistics from a seeded sample of patients."""
        rng = np.random.default_rng([seed, 7])
        idx = np.sort(rng.permutation(len(data))[:n_patients])
        v = data.videos[idx]
        self.backbone.calibrate(v.reshape(-1, *v.shape[2:]))

    def state(self) -> dict[str, np.ndarray]:
        """Everything needed to restore the model: parameters and frozen statistics."""
        out = {k: t.data for k, t in self.named_parameters().items()}
        out.update({f"buffer.{k}": v for k, v in self.named_buffers().items()})
        return out

    def load_state(self, values: dict) -> None:
        params = {k: v for k, v in values.items() if not k.startswith("buffer.")}
        self.load_parameters(params)
        for k in self.backbone.buffers:
            key = f"buffer.backbone.{k}"
            if key not in values:
                raise KeyError(f"missing buffer {key}")
            self.backbone.buffers[k] = np.asarray(values[key], dtype=np.float64).copy()
        self.backbone.calibrated = True

    def load_parameters(self, values: dict) -> None:
        current = self.named_parameters()
        if set(values) != set(current):
            raise KeyError(f"parameter names differ: {sorted(set(values) ^ set(current))[:5]}")
        for k, t in current.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ShapeError(f"{k}: expected shape {t.shape}, got {v.shape}")
            t.data = v.copy()

    def view_logits(self, videos, radiomics, age) -> Tensor:
        """``B x 4`` logits from ``B x 4 x T x H x W`` videos through the shared backbone."""
        videos = np.asarray(videos, dtype=np.float64)
        B, V, T, H, W = videos.shape
        emb = self.backbone(videos.reshape(B * V, T, H, W))
        rad = np.asarray(radiomics, dtype=np.float64).reshape(B * V, -1)
        ages = np.repeat(np.asarray(age, dtype=np.float64), V)
        logits = heads.fuse_view(emb, rad, ages, self.head_w, self.head_b)
        return logits.reshape(B, V)

    def combine(self, logits) -> Tensor:
        if self.gate is None:
            return heads.combine_average(logits)
        return heads.combine_gated(logits, self.gate)

    def forward(self, videos, radiomics, age) -> tuple[Tensor, Tensor]:
        logits = self.view_logits(videos, radiomics, age)
        return self.combine(logits), logits

    __call__ = forward

    def predict(self, data: PatientSet, batch: int = 12) -> tuple[np.ndarray, np.ndarray]:
        """Fused scores ``(P,)`` and per-view scores ``(P, 4)`` without recording gradients."""
        ys, views = [], []
        with tn.no_grad():
            for s in range(0, len(data), batch):
                sl = slice(s, s + batch)
                y, logits = self.forward(data.videos[sl], data.radiomics[sl], data.age[sl])
                ys.append(y.data)
                views.append(heads.per_view_scores(logits).data)
        return np.concatenate(ys), np.concatenate(views)


def save_model(directory, model: RiskModel) -> Path:
    """Weights and frozen statistics (RDF1 + index) plus ``model.json`` with the architecture."""
    directory = Path(directory)
    save_weights(directory, model.state())
    cfg = asdict(model.config)
    (directory / "model.json").write_text(json.dumps(cfg, indent=1))
    return directory


def load_model(directory) -> RiskModel:
    directory = Path(directory)
    cfg = json.loads((directory / "model.json").read_text())
    bb = cfg.pop("backbone")
    model = RiskModel(ModelConfig(backbone=BackboneConfig(**bb), **cfg))
    model.load_state(load_weights(directory))
    return model
