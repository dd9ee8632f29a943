"""Loss, Adam, the training loop, pseudo-labelling and asymmetry-based control filtering."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import heads
from . import tensor as tn
from .model import PatientSet, RiskModel
from .tensor import Tensor

log = logging.getLogger(__name__)

BCE_CLIP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_patients: int = 12
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    filter_percentile: float = 90.0
    hard_labels: bool = False
    stage1_from_trained: bool = False

    def __post_init__(self):
        if self.epochs < 0 or self.epochs % 2:
            raise ValueError(f"epochs must be a non-negative even number, got {self.epochs}")
        if not 0 < self.filter_percentile <= 100:
            raise ValueError(f"filter_percentile must be in (0, 100], got {self.filter_percentile}")
        if self.batch_patients < 1:
            raise ValueError("batch_patients must be >= 1")


def bce(pred, target) -> Tensor:
    """Mean binary cross-entropy with the prediction clipped to ``[1e-7, 1 - 1e-7]``."""
    p = tn.clip(tn.as_tensor(pred), BCE_CLIP, 1.0 - BCE_CLIP)
    t = tn.as_tensor(target)
    loss = -(t * p.log() + (1.0 - t) * (1.0 - p).log())
    return loss.mean()


class Adam:
    def __init__(self, params: dict[str, Tensor], lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.t = 0

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        grads = {}
        for k, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {k!r}")
            grads[k] = g
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    steps: int = 0
    stage: str = "train"


def batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for s in range(0, n, size):
        yield order[s:s + size]


def train(model: RiskModel, data: PatientSet, cfg: TrainConfig, label_source: str = "hard",
          epochs: int | None = None, stage: str = "train", on_epoch_end=None) -> TrainLog:
    """Minimize batch-mean BCE of the fused score; shuffling is seeded by ``cfg.seed``.

    ``on_epoch_end(epoch, model, log)`` runs after every epoch (1-based), e.g. for checkpoints.
    """
    if label_source not in ("hard", "soft"):
        raise ValueError(f"label_source must be 'hard' or 'soft', not {label_source!r}")
    if label_source == "soft" and data.y_soft is None:
        raise ValueError("soft-label training needs a pseudo-labelled dataset")
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    targets = data.label.astype(np.float64) if label_source == "hard" else data.y_soft
    if not model.backbone.calibrated:
        model.calibrate(data, seed=cfg.seed)
    epochs = cfg.epochs if epochs is None else epochs
    rng = np.random.default_rng([cfg.seed, len(data), epochs])
    opt = Adam(model.named_parameters(), cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    out = TrainLog(stage=stage)
    for epoch in range(epochs):
        total = 0.0
        for idx in batches(len(data), cfg.batch_patients, rng):
            opt.zero_grad()
            y, _ = model(data.videos[idx], data.radiomics[idx], data.age[idx])
            loss = bce(y, targets[idx])
            if not math.isfinite(loss.item()):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}")
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
            out.steps += 1
        out.epoch_loss.append(total / len(data))
        log.info("%s epoch %d loss %.5f", stage, epoch + 1, out.epoch_loss[-1])
        if on_epoch_end is not None:
            on_epoch_end(epoch + 1, model, out)
    return out


def pseudo_label(model: RiskModel, data: PatientSet, batch: int = 12) -> PatientSet:
    """Attach soft labels (fused scores) and asymmetry scores from a trained model."""
    y, views = model.predict(data, batch)
    return replace(data, y_soft=y, gamma=heads.asymmetry(views))


def nearest_rank_percentile(values, T: float) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("percentile of an empty set")
    rank = max(1, math.ceil(T / 100.0 * v.size))
    return float(v[rank - 1])


def filter_controls(data: PatientSet, T: float) -> tuple[PatientSet, float]:
    """Keep every case and every control whose asymmetry is strictly below the T-th percentile."""
    if data.gamma is None:
        raise ValueError("filter_controls needs asymmetry scores; run pseudo_label first")
    controls = data.label == 0
    if not controls.any():
        raise ValueError("filter_controls needs at least one control")
    p_t = nearest_rank_percentile(data.gamma[controls], T)
    keep = ~controls | (data.gamma < p_t)
    return data.subset(np.flatnonzero(keep)), p_t


def two_stage_finetune(model: RiskModel, d_s: PatientSet, cfg: TrainConfig,
                       after_stage1=None, on_epoch_end=None) -> tuple[RiskModel, list[TrainLog]]:
    """Half the epochs on the pseudo-labelled set, half on its control-filtered subset.

    ``after_stage1(model)`` is called between the stages, e.g. to score the stage-1 model.
    """
    source = "hard" if cfg.hard_labels else "soft"
    half = cfg.epochs // 2
    log1 = train(model, d_s, cfg, source, epochs=half, stage="stage1", on_epoch_end=on_epoch_end)
    if after_stage1 is not None:
        after_stage1(model)
    d_f, p_t = filter_controls(d_s, cfg.filter_percentile)
    if len(d_f) == 0:
        raise ValueError("filtered dataset is empty")
    log.info("filter: P_T=%.5f keeps %d of %d patients", p_t, len(d_f), len(d_s))
    log2 = train(model, d_f, replace(cfg, seed=cfg.seed + 1), source, epochs=half, stage="stage2",
                 on_epoch_end=on_epoch_end)
    return model, [log1, log2]
