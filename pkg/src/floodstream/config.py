"""Run configuration: one JSON document that captures a whole run.

Every section is a flat dataclass; ``RunConfig.from_dict`` rejects unknown
keys and wrong types, then ``validate`` builds each module's own config
object so bad values fail before any work starts.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .denoiser import AttnMode, DenoiserConfig
from .errors import ConfigError
from .motion import CLASSES
from .schedule import ScheduleKind, ScheduleParams
from .vae import VaeConfig

SEED_ENV = "FLOOD_SEED"


@dataclass
class ScheduleSection:
    n_s: float = 4.0
    dt: float = 0.05
    kind: str = "triangular"
    K: int = 48


@dataclass
class DataSection:
    classes: list = field(default_factory=lambda: list(CLASSES))
    per_class: int = 100
    n_frames: int = 192
    multi_fraction: float = 0.5   # share of clips that chain 2-3 classes
    crossfade: int = 8


@dataclass
class VaeSection:
    hidden: int = 64
    kernel: int = 4
    gamma: float = 0.25
    steps: int = 2000
    lr: float = 2e-3
    batch: int = 16
    clip_len: int = 64


@dataclass
class DenoiserSection:
    layers: int = 4
    heads: int = 4
    model_dim: int = 64
    context_horizon: int = 32
    attn_mode: str = "bidirectional_window"
    steps: int = 5000
    lr: float = 1e-3
    batch: int = 16
    log_every: int = 50
    fid_every: int = 0


@dataclass
class RunConfig:
    seed: int = 0
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    data: DataSection = field(default_factory=DataSection)
    vae: VaeSection = field(default_factory=VaeSection)
    denoiser: DenoiserSection = field(default_factory=DenoiserSection)
    frame_budget_ms: float = 33.0
    out_dir: str = "runs/default"

    # -------------------------------------------------------------- io

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        cfg = _build(cls, d, "")
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path) as f:
                d = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def dump(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    def with_env(self, environ=None) -> "RunConfig":
        environ = os.environ if environ is None else environ
        if SEED_ENV in environ:
            try:
                self.seed = int(environ[SEED_ENV])
            except ValueError:
                raise ConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
        return self

    # -------------------------------------------------------------- derived

    def schedule_params(self) -> ScheduleParams:
        return ScheduleParams(self.schedule.n_s, self.schedule.K, ScheduleKind(self.schedule.kind))

    def vae_config(self) -> VaeConfig:
        return VaeConfig(hidden=self.vae.hidden, kernel=self.vae.kernel, gamma=self.vae.gamma)

    def denoiser_config(self) -> DenoiserConfig:
        s = self.denoiser
        return DenoiserConfig(layers=s.layers, heads=s.heads, model_dim=s.model_dim,
                              context_horizon=s.context_horizon, attn_mode=AttnMode(s.attn_mode))

    def validate(self) -> None:
        try:
            self.schedule_params()
            self.vae_config()
            self.denoiser_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not self.schedule.dt > 0:
            raise ConfigError(f"schedule.dt must be positive, got {self.schedule.dt}")
        if not self.data.classes:
            raise ConfigError("data.classes is empty")
        unknown = set(self.data.classes) - set(CLASSES)
        if unknown:
            raise ConfigError(f"unknown classes {sorted(unknown)}; choose from {list(CLASSES)}")
        if self.data.per_class < 1 or self.data.n_frames < 8:
            raise ConfigError("data.per_class must be >= 1 and data.n_frames >= 8")
        if not 0 <= self.data.multi_fraction <= 1:
            raise ConfigError("data.multi_fraction must lie in [0, 1]")
        if self.data.n_frames < 4 * self.schedule.K:
            raise ConfigError(f"data.n_frames={self.data.n_frames} is shorter than 4*K={4 * self.schedule.K}")
        for name in ("steps", "batch"):
            for sec in (self.vae, self.denoiser):
                if getattr(sec, name) < (0 if name == "steps" else 1):
                    raise ConfigError(f"{name} out of range: {getattr(sec, name)}")
        if self.frame_budget_ms <= 0:
            raise ConfigError("frame_budget_ms must be positive")


def _build(cls, d, prefix: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{prefix or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    extra = set(d) - set(fields)
    if extra:
        raise ConfigError(f"unknown config keys {sorted(prefix + k for k in extra)}")
    kwargs = {}
    for name, value in d.items():
        f = fields[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{prefix}{name}.")
        else:
            kwargs[name] = _coerce(value, default, prefix + name)
    return cls(**kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool) or value is None:
        ok = isinstance(value, type(default))
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}")
    return value


_JSON_TYPES = {bool: "boolean", int: "integer", float: "number", str: "string", list: "array"}


def json_schema(cls=RunConfig) -> dict:
    """JSON schema of the config file (draft 2020-12 subset)."""
    props = {}
    for f in dataclasses.fields(cls):
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            props[f.name] = json_schema(type(default))
        else:
            props[f.name] = {"type": _JSON_TYPES[type(default)], "default": default}
    return {"type": "object", "properties": props, "additionalProperties": False}
