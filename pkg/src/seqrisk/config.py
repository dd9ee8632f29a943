"""Run configuration: defaults, a JSON file on top, command-line flags on top of that.

The resolved configuration is a dict of sections, each backed by a frozen
dataclass whose ``__post_init__`` does the validation.  Unknown sections or
keys are rejected by name.
"""

from __future__ import annotations

import argparse
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .backbone import BackboneConfig
from .cohort import CohortConfig
from .model import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    image_size: int = 64
    frames: int = 2
    fill: str = "oldest"
    n_bins: int = 32

    def __post_init__(self):
        if self.image_size < 8 or self.frames < 1:
            raise ValueError("image_size must be >= 8 and frames >= 1")
        if self.fill not in ("oldest", "current"):
            raise ValueError(f"fill must be 'oldest' or 'current', not {self.fill!r}")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")


@dataclass(frozen=True)
class ShiftFlags:
    c_b: int | None = None
    share_query_key: bool = False
    share_alpha_beta: bool = False
    query_value_addition: bool = False
    global_key_from_p: bool = False


@dataclass(frozen=True)
class BackboneSection:
    stem_channels: int = 16
    layer_channels: tuple = (16, 32, 64, 128)
    blocks_per_layer: int = 2
    temporal_kernel: int = 3
    stem_pool: bool = True
    shift_layer: int | None = None
    nonlocal_layer: int | None = None
    embed_dim: int = 128
    temporal_mode: str = "replicate"

    def __post_init__(self):
        object.__setattr__(self, "layer_channels", tuple(self.layer_channels))
        self.build()

    def build(self, shift: ShiftFlags | None = None) -> BackboneConfig:
        flags = {k: v for k, v in asdict(shift or ShiftFlags()).items() if v not in (None, False)}
        return BackboneConfig(**asdict(self), shift_flags=flags)


@dataclass(frozen=True)
class ModelSection:
    combine: str = "gated"
    gate_init: float = 0.6
    gate_fixed: float = 0.4

    def __post_init__(self):
        ModelConfig(combine=self.combine, gate_init=self.gate_init, gate_fixed=self.gate_fixed)


@dataclass(frozen=True)
class EvalConfig:
    n_boot: int = 1000
    alpha: float = 0.05
    horizon_mode: str = "cumulative"
    seed: int = 0

    def __post_init__(self):
        if self.horizon_mode not in ("cumulative", "exclusive"):
            raise ValueError(f"horizon_mode must be 'cumulative' or 'exclusive', not {self.horizon_mode!r}")
        if self.n_boot < 1 or not 0 < self.alpha < 1:
            raise ValueError("n_boot must be >= 1 and alpha in (0, 1)")


@dataclass(frozen=True)
class RuntimeConfig:
    threads: int = 0
    checkpoint_every: int = 5

    def __post_init__(self):
        if self.threads < 0 or self.checkpoint_every < 0:
            raise ValueError("threads and checkpoint_every must be >= 0")

    @property
    def workers(self) -> int:
        return self.threads or os.cpu_count() or 1


SECTIONS = {
    "cohort": CohortConfig,
    "data": DataConfig,
    "backbone": BackboneSection,
    "shift": ShiftFlags,
    "model": ModelSection,
    "train": TrainConfig,
    "eval": EvalConfig,
    "runtime": RuntimeConfig,
}

HELP = {
    "cohort": {"n_patients": "patients to generate", "case_fraction": "share of cases",
               "category_mix": "case shares of categories 1,2,3", "screenings_distribution":
               "probability of 1,2,3 screenings", "image_size": "raw image width in pixels",
               "signal_strength": "planted blob strength (0 = no signal)", "marker_probability":
               "chance of a bright corner marker per view", "image_format": "rdf or pgm", "seed": "generator seed"},
    "data": {"image_size": "model input size", "frames": "screenings stacked per view (most recent first)",
             "fill": "padding for short histories: repeat the oldest or the current screening",
             "n_bins": "gray levels for texture matrices"},
    "train": {"epochs": "total epochs (even)", "batch_patients": "patients per batch",
              "filter_percentile": "control asymmetry percentile T", "hard_labels":
              "finetune on true labels instead of soft labels", "stage1_from_trained":
              "start finetuning from the trained model instead of from scratch",
              "seed": "shuffling, split and init seed"},
    "model": {"combine": "average or gated", "gate_init": "initial effective view scale",
              "gate_fixed": "fixed gate offset w_f"},
    "runtime": {"threads": "worker processes for feature extraction (0 = all cores)",
                "checkpoint_every": "save weights every N epochs (0 = only at the end)"},
}


def defaults() -> dict:
    return {name: asdict(cls()) for name, cls in SECTIONS.items()}


def _coerce(cls, key, value):
    default = next(f for f in fields(cls) if f.name == key).default
    if isinstance(default, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def build(raw: dict) -> dict:
    """Validate a (possibly partial) config dict into section dataclasses."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object of sections")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    out = {}
    for name, cls in SECTIONS.items():
        values = raw.get(name, {})
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be an object")
        names = {f.name for f in fields(cls)}
        bad = set(values) - names
        if bad:
            raise ConfigError(f"unknown key(s) in {name}: {', '.join(name + '.' + b for b in sorted(bad))}")
        try:
            out[name] = cls(**{k: _coerce(cls, k, v) for k, v in values.items()})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} config: {exc}") from exc
    return out


def to_dict(cfg: dict) -> dict:
    return {name: asdict(section) for name, section in cfg.items()}


def load(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc


def save(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_dict(cfg), indent=1) + "\n")
    return path


# -- command-line flags --------------------------------------------------------------
def _parse_tuple(text, kind):
    return tuple(kind(t) for t in text.split(",") if t.strip())


def _flag_type(default, annotation: str):
    if isinstance(default, bool):
        return None
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        return lambda s: _parse_tuple(s, kind)
    if default is None:
        return lambda s: None if s.lower() == "none" else int(s)
    return type(default)


def add_flags(parser: argparse.ArgumentParser, sections) -> None:
    """One ``--field-name`` flag per field of each section; unset flags leave the config untouched."""
    seen = {}
    for name in sections:
        cls = SECTIONS[name]
        group = parser.add_argument_group(f"{name} options")
        for f in fields(cls):
            flag = "--" + f.name.replace("_", "-")
            if flag in seen:
                raise RuntimeError(f"flag {flag} defined by both {seen[flag]} and {name}")
            seen[flag] = name
            text = HELP.get(name, {}).get(f.name, f.name.replace("_", " "))
            shown = ",".join(map(str, f.default)) if isinstance(f.default, tuple) else f.default
            kw = dict(dest=f"{name}.{f.name}", default=argparse.SUPPRESS, help=f"{text} (default: {shown})")
            if isinstance(f.default, bool):
                group.add_argument(flag, action=argparse.BooleanOptionalAction, **kw)
            else:
                group.add_argument(flag, type=_flag_type(f.default, str(f.type)), metavar=f.name.upper(), **kw)


def resolve(args: argparse.Namespace) -> dict:
    """Defaults, then ``--config`` file, then explicit flags."""
    raw = defaults()
    if getattr(args, "config", None):
        loaded = load(args.config)
        build(loaded)  # reject unknown keys before merging
        for name, values in loaded.items():
            raw[name].update(values)
    for dest, value in vars(args).items():
        if "." in dest:
            section, key = dest.split(".", 1)
            raw[section][key] = value
    return build(raw)


def model_config(cfg: dict) -> ModelConfig:
    m = cfg["model"]
    return ModelConfig(backbone=cfg["backbone"].build(cfg["shift"]), combine=m.combine, gate_init=m.gate_init,
                       gate_fixed=m.gate_fixed)

