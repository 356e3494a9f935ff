"""Run configuration: nested dataclasses, strict YAML loading and dotted overrides."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional

import yaml

from .data.skeleton import STREAM_KINDS
from .errors import ConfigError
from .losses import LossConfig
from .schedule import OptimizerConfig


@dataclass
class DataConfig:
    root: str = ""
    benchmark: str = "xsub"
    streams: List[str] = field(default_factory=lambda: ["joint"])
    prompts: str = ""
    noise_fraction: float = 0.0  # share of training pairs whose prompts are swapped across classes

    def validate(self):
        for s in self.streams:
            if s not in STREAM_KINDS:
                raise ConfigError(f"unknown stream {s!r}; expected one of {STREAM_KINDS}", path="data.streams")
        if not self.streams:
            raise ConfigError("at least one stream is required", path="data.streams")
        if self.benchmark.lower() not in ("xsub", "xview", "xset"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}", path="data.benchmark")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ConfigError("noise_fraction must lie in [0, 1]", path="data.noise_fraction")


@dataclass
class ModelConfig:
    channels: List[int] = field(default_factory=lambda: [16, 32, 64])
    strides: List[int] = field(default_factory=lambda: [2, 2, 2])
    temporal_kernel: int = 9
    graph_strategy: str = "spatial"
    edge_importance: bool = True
    embed_dim: int = 8
    hidden_dim: int = 0  # 0 = encoder feature width

    def validate(self):
        if not self.channels or len(self.channels) != len(self.strides):
            raise ConfigError("channels and strides must be non-empty and equally long", path="model.channels")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive", path="model.embed_dim")
        if self.graph_strategy not in ("uniform", "spatial"):
            raise ConfigError(f"unknown graph strategy {self.graph_strategy!r}", path="model.graph_strategy")
        if self.temporal_kernel < 1 or self.temporal_kernel % 2 == 0:
            raise ConfigError("temporal_kernel must be a positive odd number", path="model.temporal_kernel")


@dataclass
class TemperatureConfig:
    init: float = 0.07
    learnable: bool = True
    per_branch_tau: bool = False
    min: float = 1e-3
    max: float = 1.0
    lr_scale: float = 1.0  # log-tau steps at lr * lr_scale

    def validate(self):
        if not 0 < self.min <= self.init <= self.max:
            raise ConfigError(f"need 0 < min <= init <= max, got {self.min}, {self.init}, {self.max}",
                              path="temperature.init")
        if self.lr_scale < 0:
            raise ConfigError("lr_scale must be >= 0", path="temperature.lr_scale")


@dataclass
class ScheduleConfig:
    alpha_start: float = 0.9
    alpha_end: float = 0.1
    progressive: bool = True
    alpha_fixed: float = 0.5  # used when progressive is off
    dynamic_partition: bool = True  # off: both target families see the whole batch

    def validate(self):
        if not 0.0 <= self.alpha_end <= self.alpha_start <= 1.0:
            raise ConfigError("need 0 <= alpha_end <= alpha_start <= 1", path="schedule.alpha_start")
        if not 0.0 <= self.alpha_fixed <= 1.0:
            raise ConfigError("alpha_fixed must lie in [0, 1]", path="schedule.alpha_fixed")


@dataclass
class EngineConfig:
    mode: str = "stub"
    frames: int = 1
    threshold: float = 0.35
    fallback_fullframe: bool = False
    frozen_encoder: str = "stub"
    workers: int = 4
    seed: int = 0

    def validate(self):
        if self.mode not in ("stub", "remote"):
            raise ConfigError(f"unknown engine mode {self.mode!r}", path="engine.mode")
        if self.frozen_encoder not in ("stub", "clip-vit-l14-336"):
            raise ConfigError(f"unknown frozen encoder {self.frozen_encoder!r}", path="engine.frozen_encoder")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1", path="engine.frames")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigError("threshold must lie in [0, 1]", path="engine.threshold")


@dataclass
class EvalConfig:
    k: int = 1
    probe_epochs: int = 100
    probe_lr: float = 0.1
    probe_milestones: List[int] = field(default_factory=lambda: [60, 80])
    batch_size: int = 256
    finetune_epochs: int = 30
    finetune_lr: float = 0.01
    finetune_batch_size: int = 64
    semi_fractions: List[float] = field(default_factory=lambda: [0.01, 0.05, 0.1])
    full_finetune: bool = False
    seed: int = 0

    def validate(self):
        if self.k < 1:
            raise ConfigError("k must be >= 1", path="eval.k")
        if self.finetune_batch_size < 2:
            raise ConfigError("finetune_batch_size must be >= 2", path="eval.finetune_batch_size")
        for f in self.semi_fractions:
            if not 0.0 < f <= 1.0:
                raise ConfigError(f"fraction {f} outside (0, 1]", path="eval.semi_fractions")


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    temperature: TemperatureConfig = field(default_factory=TemperatureConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    optim: OptimizerConfig = field(default_factory=OptimizerConfig)
    engine: EngineConfig = field(default_factory=EngineConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 0
    deterministic: bool = False
    output_dir: str = "runs/latest"

    def validate(self):
        for f in dataclasses.fields(self):
            sub = getattr(self, f.name)
            if dataclasses.is_dataclass(sub):
                sub.validate()

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def dump(self, path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False), encoding="utf-8")


# ---------------------------------------------------------------- strict loading

def _coerce(value, hint, path):
    origin = typing.get_origin(hint)
    if dataclasses.is_dataclass(hint):
        if not isinstance(value, dict):
            raise ConfigError(f"expected a mapping, got {type(value).__name__}", path=path)
        return from_dict(hint, value, path)
    if origin in (list, List):
        (inner,) = typing.get_args(hint)
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {type(value).__name__}", path=path)
        return [_coerce(v, inner, f"{path}[{i}]") for i, v in enumerate(value)]
    if origin is typing.Union:
        args = [a for a in typing.get_args(hint) if a is not type(None)]
        return None if value is None else _coerce(value, args[0], path)
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", path=path)
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", path=path)
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", path=path)
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", path=path)
        return value
    return value


def from_dict(cls, data: dict, path: str = ""):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError("unknown key", path=sub)
        kwargs[key] = _coerce(value, hints[key], sub)
    return cls(**kwargs)


def apply_override(data: dict, dotted: str, raw_value) -> None:
    value = yaml.safe_load(raw_value) if isinstance(raw_value, str) else raw_value
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError("cannot override inside a scalar", path=dotted)
    node[keys[-1]] = value


def _deep_merge(dst: dict, src: dict) -> dict:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_merge(dst[k], v)
        else:
            dst[k] = v
    return dst


def resolve_config(file=None, overrides: Optional[dict] = None, base: Optional[dict] = None) -> RunConfig:
    """Defaults, then ``base`` (dotted), then the YAML/JSON file, then dotted overrides; validated."""
    data = {}
    for k, v in (base or {}).items():
        apply_override(data, k, v)
    if file:
        text = Path(file).read_text(encoding="utf-8")
        try:
            loaded = yaml.safe_load(text) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"cannot parse {file}: {e}") from e
        if not isinstance(loaded, dict):
            raise ConfigError(f"{file}: top level must be a mapping")
        _deep_merge(data, loaded)
    for k, v in (overrides or {}).items():
        apply_override(data, k, v)
    cfg = from_dict(RunConfig, data)
    cfg.validate()
    return cfg


def schema(cls=RunConfig) -> dict:
    """JSON-schema description of the config tree (published for tooling)."""
    hints = typing.get_type_hints(cls)
    props = {}
    for f in dataclasses.fields(cls):
        hint = hints[f.name]
        props[f.name] = _schema_for(hint)
        if f.default is not dataclasses.MISSING:
            props[f.name]["default"] = f.default
        elif f.default_factory is not dataclasses.MISSING and not dataclasses.is_dataclass(hint):
            props[f.name]["default"] = f.default_factory()
    return {"type": "object", "additionalProperties": False, "properties": props}


def _schema_for(hint):
    if dataclasses.is_dataclass(hint):
        return schema(hint)
    if typing.get_origin(hint) in (list, List):
        return {"type": "array", "items": _schema_for(typing.get_args(hint)[0])}
    return {"type": {bool: "boolean", int: "integer", float: "number", str: "string"}.get(hint, "string")}
