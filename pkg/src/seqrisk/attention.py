"""Additive spatial-channel attention block, a non-local baseline, and cost accounting.

Both blocks act on a position-major feature matrix ``X`` of shape ``(..., n, C)``
where ``n = T*H*W``; leading dimensions are an optional batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .tensor import ShapeError, Tensor, matmul, softmax

NONLOCAL_MAX_POSITIONS = 2 ** 16


@dataclass(frozen=True)
class ShiftConfig:
    c_in: int
    c_b: int | None = None
    share_query_key: bool = False
    share_alpha_beta: bool = False
    query_value_addition: bool = False
    global_key_from_p: bool = False

    def __post_init__(self):
        if self.c_b is None:
            object.__setattr__(self, "c_b", max(1, self.c_in // 2))
        if not 1 <= self.c_b <= self.c_in:
            raise ValueError(f"need 1 <= c_b <= c_in, got c_b={self.c_b}, c_in={self.c_in}")


@dataclass(frozen=True)
class AttentionState:
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def n(self) -> int:
        return self.alpha.shape[-1]

    def check(self, tol: float = 1e-12) -> None:
        for name, w in (("alpha", self.alpha), ("beta", self.beta)):
            if np.max(np.abs(w.sum(axis=-1) - 1.0)) > tol:
                raise ValueError(f"{name} does not sum to 1")
            if np.any(w < 0) or np.any(w > 1):
                raise ValueError(f"{name} has entries outside [0, 1]")


def _normal(rng, shape, fan_in):
    return Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True)


def shift_param_names(cfg: ShiftConfig) -> list[str]:
    names = ["w_q"]
    if not cfg.share_query_key:
        names.append("w_k")
    names += ["w_v", "fc_q_w", "fc_q_b"]
    if not cfg.share_alpha_beta:
        names += ["fc_k_w", "fc_k_b"]
    return names + ["w_o"]


def init_shift(cfg: ShiftConfig, rng: np.random.Generator, zero_output: bool = True) -> dict[str, Tensor]:
    """Shared projections are simply absent from the dict.

    The output transform starts at zero so a freshly inserted block is the identity.
    """
    C, Cb = cfg.c_in, cfg.c_b
    shapes = {"w_q": (C, Cb), "w_k": (C, Cb), "w_v": (C, Cb), "fc_q_w": (Cb, 1), "fc_q_b": (1,),
              "fc_k_w": (Cb, 1), "fc_k_b": (1,), "w_o": (Cb, C)}
    params = {}
    for name in shift_param_names(cfg):
        shape = shapes[name]
        if name.endswith("_b") or (name == "w_o" and zero_output):
            params[name] = Tensor(np.zeros(shape), requires_grad=True)
        else:
            params[name] = _normal(rng, shape, shape[0])
    return params


def _check_input(X: Tensor, c_in: int):
    if X.ndim < 2 or X.shape[-1] != c_in:
        raise ShapeError(f"expected (..., n, {c_in}) features, got {X.shape}")


def shift_forward(X, cfg: ShiftConfig, params: dict) -> tuple[Tensor, AttentionState]:
    X = tn.as_tensor(X)
    _check_input(X, cfg.c_in)
    w_k = params["w_q"] if cfg.share_query_key else params["w_k"]
    fc_k_w, fc_k_b = ((params["fc_q_w"], params["fc_q_b"]) if cfg.share_alpha_beta
                      else (params["fc_k_w"], params["fc_k_b"]))

    Q = matmul(X, params["w_q"])
    K = matmul(X, w_k)
    V = matmul(X, params["w_v"])

    alpha = softmax(matmul(Q, params["fc_q_w"]) + params["fc_q_b"], axis=-2)  # (..., n, 1)
    q = alpha * Q.sum(axis=-1, keepdims=True)
    p = q * K
    beta = softmax(matmul(p, fc_k_w) + fc_k_b, axis=-2)
    k = beta * (p if cfg.global_key_from_p else K).sum(axis=-1, keepdims=True)
    u = k * V
    if cfg.query_value_addition:
        u = u + Q
    Y = X + matmul(u, params["w_o"])
    state = AttentionState(alpha.data[..., 0].copy(), beta.data[..., 0].copy())
    return Y, state


def init_nonlocal(c_in: int, c_b: int, rng: np.random.Generator, zero_output: bool = True) -> dict[str, Tensor]:
    params = {name: _normal(rng, (c_in, c_b), c_in) for name in ("theta", "phi", "g")}
    params["w_o"] = (Tensor(np.zeros((c_b, c_in)), requires_grad=True) if zero_output
                     else _normal(rng, (c_b, c_in), c_b))
    return params


def nonlocal_forward(X, params: dict, max_positions: int = NONLOCAL_MAX_POSITIONS) -> Tensor:
    """Embedded-Gaussian non-local block: ``X + softmax(theta phi^T) g W_O``."""
    X = tn.as_tensor(X)
    _check_input(X, params["theta"].shape[0])
    n = X.shape[-2]
    if n > max_positions:
        raise MemoryError(f"non-local attention over n={n} positions exceeds the cap of {max_positions}")
    theta = matmul(X, params["theta"])
    phi = matmul(X, params["phi"])
    g = matmul(X, params["g"])
    attn = softmax(matmul(theta, phi.transpose(_swap_last(phi.ndim))), axis=-1)
    return X + matmul(matmul(attn, g), params["w_o"])


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


# -- resource accounting -------------------------------------------------------------
def count_params(kind: str, C: int, C_b: int, cfg: ShiftConfig | None = None) -> int:
    if kind == "nonlocal":
        return 4 * C * C_b
    if kind != "shift":
        raise ValueError(f"unknown attention kind {kind!r}")
    total = 4 * C * C_b + 2 * (C_b + 1)
    if cfg is not None:
        total -= C * C_b * cfg.share_query_key + (C_b + 1) * cfg.share_alpha_beta
    return total


def mac_breakdown(kind: str, C: int, C_b: int, n: int) -> dict[str, int]:
    if kind == "nonlocal":
        return {"projections": 3 * n * C * C_b, "attention": 2 * n * n * C_b, "output": n * C_b * C}
    if kind == "shift":
        return {"projections": 3 * n * C * C_b, "fc": 2 * n * C_b, "broadcast": 2 * n * C_b,
                "channel_sum": 2 * n * C_b, "output": n * C_b * C}
    raise ValueError(f"unknown attention kind {kind!r}")


def count_macs(kind: str, C: int, C_b: int, n: int) -> int:
    return sum(mac_breakdown(kind, C, C_b, n).values())


# -- attention map export ------------------------------------------------------------
def top_attention_points(state: AttentionState | np.ndarray, k: int, dims: tuple[int, int, int]):
    """The ``k`` largest alpha weights as ``(t, y, x, weight)``, descending; ties by flat index."""
    alpha = np.asarray(getattr(state, "alpha", state), dtype=np.float64).ravel()
    T, H, W = dims
    if alpha.size != T * H * W:
        raise ShapeError(f"alpha has {alpha.size} entries, dims {dims} give {T * H * W}")
    if not 0 < k <= alpha.size:
        raise ValueError(f"k must be in [1, {alpha.size}], got {k}")
    order = np.lexsort((np.arange(alpha.size), -alpha))[:k]
    out = []
    for flat in order:
        t, rem = divmod(int(flat), H * W)
        y, x = divmod(rem, W)
        out.append((t, y, x, float(alpha[flat])))
    return out
