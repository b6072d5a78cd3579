"""Run configuration: nested frozen dataclasses parsed from JSON with strict key checking."""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import LossConfig
from .model import ModelConfig
from .nn import SABConfig
from .optim import PolySchedule
from .text import TextConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    channels: tuple = (16, 32, 64, 128)
    stem_channels: int = 16
    scales: tuple = (32, 16, 8, 4)
    embed_size: int = 32
    table_seed: int = 7
    learnable_text: bool = False
    attention: str = "cross"
    normalization: str = "layernorm"
    gate: str = "softmax"
    expansion: bool = True
    expansion_factor: int = 2
    reduction: int = 4


@dataclass(frozen=True)
class LossSection:
    lam: float = 0.5
    rmi_region_side: int = 3
    rmi_downsample: int = 2
    matrix_epsilon: float = 1e-3
    inverse_ridge: float = 1e-3


@dataclass(frozen=True)
class OptimSection:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.05
    total_steps: int = 2000
    power: float = 0.9


@dataclass(frozen=True)
class TrainSection:
    batch_size: int = 16
    seed: int = 1
    eval_slice: int = 64
    eval_every: int = 100
    log_every: int = 10
    dtype: str = "float32"


@dataclass(frozen=True)
class PathSection:
    data: str = ""
    out: str = ""


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    paths: PathSection = field(default_factory=PathSection)

    # -- derived component configs ------------------------------------------
    def model_config(self) -> ModelConfig:
        m = self.model
        text = TextConfig(embed_size=m.embed_size, table_seed=m.table_seed, learnable=m.learnable_text)
        sab = SABConfig(
            embed_size=m.embed_size, channels=m.channels[-1], attention=m.attention,
            normalization=m.normalization, gate=m.gate, expansion=m.expansion,
            expansion_factor=m.expansion_factor, reduction=m.reduction,
        )
        return ModelConfig(m.channels, m.stem_channels, m.scales, text, sab, seed=self.train.seed)

    def loss_config(self) -> LossConfig:
        return LossConfig(**dataclasses.asdict(self.loss))

    def schedule(self) -> PolySchedule:
        return PolySchedule(self.optim.lr, self.optim.total_steps, self.optim.power)

    @property
    def np_dtype(self):
        return np.dtype(self.train.dtype).type

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **sections) -> "RunConfig":
        """``cfg.replace(model={"gate": "sigmoid"})`` -> new validated config."""
        data = self.to_dict()
        for name, updates in sections.items():
            if name not in data:
                raise ConfigError(f"unknown config section {name!r}")
            data[name].update(updates)
        return from_dict(data)


_SECTION_TYPES = {
    "model": ModelSection, "loss": LossSection, "optim": OptimSection,
    "train": TrainSection, "paths": PathSection,
}


def _coerce(default, value, where):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{where}: expected a list of integers, got {value!r}")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def from_dict(data: dict) -> RunConfig:
    """Validate and freeze.  Unknown sections or keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    sections = {}
    for name, payload in data.items():
        if name not in _SECTION_TYPES:
            raise ConfigError(f"unknown config section {name!r}")
        cls = _SECTION_TYPES[name]
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        if not isinstance(payload, dict):
            raise ConfigError(f"section {name!r} must be an object")
        for key in payload:
            if key not in known:
                raise ConfigError(f"unknown key {name}.{key}")
        kwargs = {k: _coerce(getattr(defaults, k), v, f"{name}.{k}") for k, v in payload.items()}
        sections[name] = cls(**kwargs)
    cfg = RunConfig(**sections)
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    try:
        cfg.model_config()
        cfg.loss_config()
        cfg.schedule()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    t = cfg.train
    if t.batch_size < 1 or t.eval_slice < 1 or t.eval_every < 1 or t.log_every < 1:
        raise ConfigError("train sizes and intervals must be positive")
    if t.dtype not in ("float32", "float64"):
        raise ConfigError(f"train.dtype must be float32 or float64, got {t.dtype!r}")
    if cfg.optim.lr < 0 or cfg.optim.weight_decay < 0:
        raise ConfigError("learning rate and weight decay must be non-negative")


def load_config(path=None, env=None) -> RunConfig:
    """Read a JSON config (defaults when ``path`` is None); SAB_SEED overrides train.seed."""
    data = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    cfg = from_dict(data)
    env = os.environ if env is None else env
    if env.get("SAB_SEED"):
        cfg = cfg.replace(train={"seed": int(env["SAB_SEED"])})
    return cfg
