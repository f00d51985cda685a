"""JSON experiment configuration.

A config file is a JSON object whose keys mirror :class:`TrainConfig`; the
nested sections ``data``, ``arch``, ``optimizer``, ``optimizer_phase2`` and
``loss`` mirror :class:`DataConfig`, :class:`ArchConfig`,
:class:`~compcausal.diffcore.OptimizerSpec` and
:class:`~compcausal.model.LossWeights`. Missing keys take the defaults below;
unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .diffcore import OptimizerSpec
from .errors import ConfigError
from .model import LossWeights

METHODS = ("causal", "causal_no_indep", "visprod", "visprod_ci", "le")
SCHEDULES = ("joint", "alternating")
CRITERIA = ("harmonic", "closed", "ausuc")


@dataclass(frozen=True)
class DataConfig:
    source: str = "scm"
    path: str = ""
    num_attrs: int = 8
    num_objs: int = 3
    ratio: str = "5:5"
    mode: str = "overlapping"
    scm_seed: int = 0
    d_core: int = 8
    d_x: int = 16
    gen_hidden: int = 32
    generator: str = "mlp"
    sigma_a: float = 0.05
    sigma_o: float = 0.05
    sigma_x: float = 0.05
    alpha: float = 0.3
    uniform_pairs: bool = False
    train_per_pair: int = 300
    val_per_pair: int = 60
    test_per_pair: int = 100

    def __post_init__(self):
        if self.source not in ("scm", "files"):
            raise ConfigError(f"data.source must be 'scm' or 'files', got {self.source!r}")
        if self.source == "files" and not self.path:
            raise ConfigError("data.path is required when data.source is 'files'")


@dataclass(frozen=True)
class ArchConfig:
    d_h: int = 150
    d_core: int = 0
    h_layers: int = 0
    g_layers: int = 1
    ginv_layers: int = 1
    cls_layers: int = 1


@dataclass(frozen=True)
class TrainConfig:
    method: str = "causal"
    schedule: str = "joint"
    batch_size: int = 2048
    max_epochs: int = 300
    early_stop: str = "harmonic"
    model_seed: int = 0
    split_seed: int = 0
    balanced: bool | None = None
    pida_samples: int = 500
    data: DataConfig = field(default_factory=DataConfig)
    arch: ArchConfig = field(default_factory=ArchConfig)
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    optimizer_phase2: OptimizerSpec | None = None
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.early_stop not in CRITERIA:
            raise ConfigError(f"unknown early-stop criterion {self.early_stop!r}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.max_epochs < 1:
            raise ConfigError("max_epochs must be >= 1")
        if self.schedule == "alternating" and self.method not in ("causal", "causal_no_indep"):
            raise ConfigError("the alternating schedule is only defined for the causal model")
        if self.schedule == "alternating" and self.data.source == "files":
            raise ConfigError("the alternating schedule cannot be used with a learned projection")

    def effective_weights(self) -> LossWeights:
        """Loss weights after the method's own overrides."""
        if self.method in ("causal_no_indep", "visprod"):
            return dataclasses.replace(self.loss, lambda_oh=0.0, lambda_rep=0.0)
        return self.loss

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)


_NESTED = {
    "data": DataConfig,
    "arch": ArchConfig,
    "optimizer": OptimizerSpec,
    "optimizer_phase2": OptimizerSpec,
    "loss": LossWeights,
}


def _build(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in payload.items():
        if cls is TrainConfig and key in _NESTED and value is not None:
            value = _build(_NESTED[key], value, f"{where}.{key}")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(payload: dict) -> TrainConfig:
    return _build(TrainConfig, payload, "config")


def load_config(path) -> TrainConfig:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(payload)


def merge(base: dict, overrides: dict) -> dict:
    """Recursive dict merge (overrides win)."""
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], value)
        else:
            out[key] = value
    return out
