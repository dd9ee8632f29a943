"""Per-view fusion head, view combination (average or gated), per-view scores and asymmetry.

View logits are carried as ``N x 4`` tensors in ``VIEWS`` order: LCC, RCC, LMLO, RMLO.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .errors import GateCollapseError
from .preprocess import VIEWS
from .tensor import ShapeError, Tensor

GATE_EPS = 1e-3


def fuse_view(embedding, radiomics, age_category, W, b) -> Tensor:
    """``W^T [embedding, radiomics, age] + b``; works on single vectors or ``N x d`` rows."""
    emb, rad = tn.as_tensor(embedding), tn.as_tensor(radiomics)
    age = tn.as_tensor(np.asarray(age_category, dtype=np.float64).reshape(*emb.shape[:-1], 1))
    x = tn.concat([emb, rad, age], axis=-1)
    W = tn.as_tensor(W)
    if W.shape[0] != x.shape[-1]:
        raise ShapeError(f"head expects {W.shape[0]} inputs, got {x.shape[-1]} "
                         f"(embedding {emb.shape[-1]} + radiomics {rad.shape[-1]} + age)")
    single = x.ndim == 1
    out = tn.matmul(x.reshape(1, -1) if single else x, W) + b
    if single:
        out = out.reshape(*out.shape[1:])
    return out.reshape(*out.shape[:-1]) if W.ndim == 2 and W.shape[1] == 1 else out


def combine_average(logits) -> Tensor:
    return tn.sigmoid(tn.as_tensor(logits).mean(axis=-1))


@dataclass
class GateState:
    """Effective view scales ``W = w_f + tanh(w_theta)``; only ``w_theta`` is trainable."""
    w_f: float
    w_theta_T: Tensor
    w_theta_S: Tensor

    @classmethod
    def from_scales(cls, initial_scale: float = 0.6, w_f: float = 0.4) -> "GateState":
        r = initial_scale - w_f
        if not -1 < r < 1:
            raise ValueError(f"initial scale {initial_scale} is unreachable from w_f={w_f}")
        th = math.atanh(r)
        return cls(w_f, Tensor([th], requires_grad=True), Tensor([th], requires_grad=True))

    def scales(self) -> tuple[Tensor, Tensor]:
        return self.w_theta_T.tanh() + self.w_f, self.w_theta_S.tanh() + self.w_f

    def parameters(self) -> list[Tensor]:
        return [self.w_theta_T, self.w_theta_S]


def combine_gated(logits, gate: GateState) -> Tensor:
    """``sigmoid((W_T (x_lcc + x_rcc) + W_S (x_lmlo + x_rmlo)) / (2 W_T + 2 W_S))``."""
    x = tn.as_tensor(logits)
    W_T, W_S = gate.scales()
    denom = (W_T + W_S) * 2.0
    if not float(denom.data[0]) / 2 > GATE_EPS:
        raise GateCollapseError(f"gate collapsed: W_T + W_S = {float(denom.data[0]) / 2:.3g} <= {GATE_EPS}")
    cc = x[..., 0] + x[..., 1]
    mlo = x[..., 2] + x[..., 3]
    return tn.sigmoid((cc * W_T + mlo * W_S) / denom)


def per_view_scores(logits) -> Tensor:
    return tn.sigmoid(tn.as_tensor(logits))


def asymmetry(scores) -> np.ndarray:
    """``|(y_lcc + y_lmlo) - (y_rcc + y_rmlo)|`` over the last axis (VIEWS order)."""
    s = np.asarray(getattr(scores, "data", scores), dtype=np.float64)
    if s.shape[-1] != len(VIEWS):
        raise ShapeError(f"expected {len(VIEWS)} view scores, got shape {s.shape}")
    return np.abs((s[..., 0] + s[..., 2]) - (s[..., 1] + s[..., 3]))
