"""Small residual 3D CNN built from inflatable kernels.

Videos are ``T x H x W`` (or batched ``N x T x H x W``) single-channel stacks of
screenings.  Batch normalization is replaced by fixed per-channel statistics
(set once by ``calibrate`` on training videos) followed by a learned affine
transform, so a forward pass never depends on other items in the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import attention
from . import tensor as tn
from .tensor import ShapeError, Tensor, conv3d, matmul


@dataclass(frozen=True)
class BackboneConfig:
    stem_channels: int = 16
    layer_channels: tuple = (16, 32, 64, 128)
    blocks_per_layer: int = 2
    temporal_kernel: int = 3
    stem_pool: bool = True
    shift_layer: int | None = None
    nonlocal_layer: int | None = None
    shift_flags: dict = field(default_factory=dict)
    embed_dim: int = 128
    temporal_mode: str = "replicate"

    def __post_init__(self):
        object.__setattr__(self, "layer_channels", tuple(self.layer_channels))
        if self.shift_layer is not None and self.nonlocal_layer is not None:
            raise ValueError("enable at most one attention kind (shift_layer or nonlocal_layer)")
        for name in ("shift_layer", "nonlocal_layer"):
            v = getattr(self, name)
            if v not in (None, 1, 2) or (v is not None and v > len(self.layer_channels)):
                raise ValueError(f"{name} must be none, 1 or 2 (and exist), got {v}")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ValueError(f"temporal_kernel must be odd and >= 1, got {self.temporal_kernel}")
        if self.blocks_per_layer < 1 or not self.layer_channels:
            raise ValueError("need at least one layer with at least one block")

    @property
    def spatial_stride(self) -> int:
        return 2 * (2 if self.stem_pool else 1) * 2 ** (len(self.layer_channels) - 1)


def inflate(w2d, t: int) -> np.ndarray:
    """``C_out x C_in x k x k`` -> ``C_out x C_in x t x k x k`` with every plane ``w2d / t``."""
    if t < 1:
        raise ValueError(f"temporal extent must be >= 1, got {t}")
    w2d = np.asarray(w2d, dtype=np.float64)
    if w2d.ndim == 5:
        if w2d.shape[2] != 1:
            raise ShapeError(f"can only inflate kernels with temporal extent 1, got {w2d.shape}")
        w2d = w2d[:, :, 0]
    if t == 1:
        return w2d[:, :, None].copy()
    return np.repeat(w2d[:, :, None] / t, t, axis=2)


def _he(rng, c_out, c_in, t, k):
    std = np.sqrt(2.0 / (c_in * t * k * k))
    return Tensor(rng.normal(0.0, std, size=(c_out, c_in, t, k, k)), requires_grad=True)


class Backbone:
    """Stem, residual layers, optional attention block, global pool, linear embedding."""

    def __init__(self, config: BackboneConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.temporal_convs: list[str] = []
        self.last_attention = None
        self.calibrated = False
        self._calibrating = False
        rng = np.random.default_rng(seed)
        c = config.stem_channels
        self._conv("stem", rng, c, 1, 1, 3)
        c_prev = c
        for li, c_out in enumerate(config.layer_channels, start=1):
            for b in range(config.blocks_per_layer):
                pre = f"layer{li}.{b}"
                stride = 2 if (b == 0 and li > 1) else 1
                t = config.temporal_kernel if b == 0 else 1
                self._conv(f"{pre}.conv1", rng, c_out, c_prev, t, 3, temporal=b == 0)
                self._conv(f"{pre}.conv2", rng, c_out, c_out, 1, 3)
                if stride != 1 or c_prev != c_out:
                    self._conv(f"{pre}.down", rng, c_out, c_prev, 1, 1)
                c_prev = c_out
            if config.shift_layer == li:
                self.shift_cfg = attention.ShiftConfig(c_out, **config.shift_flags)
                for k, v in attention.init_shift(self.shift_cfg, rng).items():
                    self.params[f"shift.{k}"] = v
            if config.nonlocal_layer == li:
                for k, v in attention.init_nonlocal(c_out, max(1, c_out // 2), rng).items():
                    self.params[f"nonlocal.{k}"] = v
        self.buffers["pool.mean"] = np.zeros(c_prev)
        self.buffers["pool.std"] = np.ones(c_prev)
        self.params["fc.w"] = Tensor(rng.normal(0.0, np.sqrt(1.0 / c_prev), size=(c_prev, config.embed_dim)),
                                     requires_grad=True)
        self.params["fc.b"] = Tensor(np.zeros(config.embed_dim), requires_grad=True)

    def _conv(self, name, rng, c_out, c_in, t, k, temporal=False):
        self.params[f"{name}.w"] = _he(rng, c_out, c_in, t, k)
        self.params[f"{name}.scale"] = Tensor(np.ones(c_out), requires_grad=True)
        self.params[f"{name}.shift"] = Tensor(np.zeros(c_out), requires_grad=True)
        self.buffers[f"{name}.mean"] = np.zeros(c_out)
        self.buffers[f"{name}.std"] = np.ones(c_out)
        if temporal:
            self.temporal_convs.append(f"{name}.w")

    def _normalize(self, y: Tensor, name: str, axes) -> Tensor:
        """Standardize with frozen statistics; during calibration, record them first."""
        if self._calibrating:
            self.buffers[f"{name}.mean"] = y.data.mean(axis=axes)
            self.buffers[f"{name}.std"] = np.maximum(y.data.std(axis=axes), 1e-5)
        shape = (-1,) + (1,) * (y.ndim - 2)
        mean = self.buffers[f"{name}.mean"].reshape(shape)
        std = self.buffers[f"{name}.std"].reshape(shape)
        return (y - mean) / std

    def _conv_affine(self, x, name, stride=1):
        w = self.params[f"{name}.w"]
        kt, k = w.shape[2], w.shape[3]
        y = conv3d(x, w, stride=stride, padding=k // 2, temporal_padding=kt // 2,
                   temporal_mode=self.config.temporal_mode)
        y = self._normalize(y, name, (0, 2, 3, 4))
        c = w.shape[0]
        return y * self.params[f"{name}.scale"].reshape(c, 1, 1, 1) + self.params[f"{name}.shift"].reshape(c, 1, 1, 1)

    def block(self, x, pre: str, stride: int = 1) -> Tensor:
        """One residual block ``pre`` (e.g. ``"layer1.0"``) on an ``N x C x T x H x W`` map."""
        out = self._conv_affine(x, f"{pre}.conv1", stride).relu()
        out = self._conv_affine(out, f"{pre}.conv2")
        skip = self._conv_affine(x, f"{pre}.down", stride) if f"{pre}.down.w" in self.params else x
        return (out + skip).relu()

    def calibrate(self, videos) -> None:
        """Fix every normalization statistic from one pass over ``videos`` (in forward order)."""
        self._calibrating = True
        try:
            with tn.no_grad():
                self.features(videos)
        finally:
            self._calibrating = False
        self.calibrated = True

    def _attend(self, x: Tensor, kind: str) -> Tensor:
        N, C, T, H, W = x.shape
        seq = x.transpose(0, 2, 3, 4, 1).reshape(N, T * H * W, C)
        p = {k.split(".", 1)[1]: v for k, v in self.params.items() if k.startswith(kind + ".")}
        if kind == "shift":
            seq, state = attention.shift_forward(seq, self.shift_cfg, p)
            self.last_attention = (state, (T, H, W))
        else:
            seq = attention.nonlocal_forward(seq, p)
        return seq.reshape(N, T, H, W, C).transpose(0, 4, 1, 2, 3)

    def features(self, video) -> Tensor:
        """Pooled, standardized ``N x C`` features before the embedding layer."""
        x = tn.as_tensor(video)
        if x.ndim == 3:
            x = x.reshape(1, *x.shape)
        if x.ndim != 4:
            raise ShapeError(f"expected T x H x W or N x T x H x W video, got {x.shape}")
        N, T, H, W = x.shape
        s = self.config.spatial_stride
        if H % s or W % s:
            raise ShapeError(f"spatial size {H}x{W} is not divisible by the total stride {s}")
        x = x.reshape(N, 1, T, H, W)
        x = self._conv_affine(x, "stem", stride=2).relu()
        if self.config.stem_pool:
            n, c, t, h, w = x.shape
            x = x.reshape(n, c, t, h // 2, 2, w // 2, 2).max(axis=(4, 6))
        for li in range(1, len(self.config.layer_channels) + 1):
            for b in range(self.config.blocks_per_layer):
                pre = f"layer{li}.{b}"
                x = self.block(x, pre, 2 if (b == 0 and li > 1) else 1)
            if self.config.shift_layer == li:
                x = self._attend(x, "shift")
            if self.config.nonlocal_layer == li:
                x = self._attend(x, "nonlocal")
        return self._normalize(x.mean(axis=(2, 3, 4)), "pool", 0)

    def forward(self, video) -> Tensor:
        """``N x embed_dim`` embeddings (``embed_dim`` for an unbatched video)."""
        single = tn.as_tensor(video).ndim == 3
        emb = matmul(self.features(video), self.params["fc.w"]) + self.params["fc.b"]
        return emb.reshape(self.config.embed_dim) if single else emb

    __call__ = forward

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())


def build(config: BackboneConfig, seed: int = 0) -> Backbone:
    return Backbone(config, seed)


def inflate_backbone(net2d: Backbone, t: int, temporal_mode: str = "replicate") -> Backbone:
    """A ``t``-frame copy of a single-frame backbone with every temporal kernel inflated."""
    if net2d.config.temporal_kernel != 1:
        raise ValueError("source backbone must have temporal_kernel == 1")
    net3d = Backbone(replace(net2d.config, temporal_kernel=t, temporal_mode=temporal_mode))
    for name, value in net2d.params.items():
        data = inflate(value.data, t) if name in net3d.temporal_convs else value.data.copy()
        net3d.params[name] = Tensor(data, requires_grad=True)
    net3d.buffers = {k: v.copy() for k, v in net2d.buffers.items()}
    net3d.calibrated = net2d.calibrated
    return net3d


def static_equivalence_check(net2d: Backbone, net3d: Backbone, frame, T: int | None = None) -> float:
    """Max abs difference between the 2D net on ``frame`` and the 3D net on it repeated ``T`` times."""
    c2, c3 = net2d.config, net3d.config
    if _arch(c2) != _arch(c3):
        raise ValueError("architecture mismatch between the 2D and 3D backbones")
    if set(net2d.params) != set(net3d.params):
        raise ValueError("architecture mismatch: parameter sets differ")
    T = c3.temporal_kernel if T is None else T
    frame = np.asarray(frame, dtype=np.float64)
    with tn.no_grad():
        e2 = net2d(frame[None]).data
        e3 = net3d(np.repeat(frame[None], T, axis=0)).data
    return float(np.max(np.abs(e2 - e3)))


def _arch(c: BackboneConfig) -> tuple:
    return (c.stem_channels, c.layer_channels, c.blocks_per_layer, c.stem_pool, c.shift_layer,
            c.nonlocal_layer, c.embed_dim)
