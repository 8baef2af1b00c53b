"""Run configuration stored as one JSON document.

Precedence when resolving a value: command-line flag, then config file, then
the dataclass default.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .fitter import FitConfig
from .metrics import Thresholds
from .objective import LossConfig
from .render import RenderConfig

METHODS = ("cubeopt", "cuberand")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    scenes: int = 20
    frames: int = 30

    def __post_init__(self):
        if self.scenes < 1:
            raise ConfigError("scenes must be at least 1")
        if self.frames < 3:
            raise ConfigError("frames must be at least 3")


@dataclass(frozen=True)
class EvalConfig:
    n_points: int = 10000
    conditioned_motion: bool = True
    full_motion_in_accrpm: bool = True
    sweep: bool = False

    def __post_init__(self):
        if self.n_points < 1:
            raise ConfigError("n_points must be positive")


@dataclass(frozen=True)
class RunConfig:
    dataset: str = "data"
    out: str = "out"
    method: str = "cubeopt"
    jobs: int = 1
    seed: int = 0
    debug_masks: bool = False
    synth: SynthConfig = field(default_factory=SynthConfig)
    fit: FitConfig = field(default_factory=FitConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    thresholds: Thresholds = field(default_factory=Thresholds)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["render"]["parts"] = list(d["render"]["parts"])
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        return _build(cls, d, "config")

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None

    @classmethod
    def load(cls, path) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        return cls.loads(p.read_text(encoding="utf-8"))

    def with_overrides(self, **flat) -> "RunConfig":
        """Apply non-None overrides; dotted keys reach into sections (``fit.iterations``)."""
        cfg = self
        for key, value in flat.items():
            if value is None:
                continue
            section, _, name = key.rpartition(".")
            if section:
                sub = getattr(cfg, section)
                cfg = replace(cfg, **{section: replace(sub, **{name: value})})
            else:
                cfg = replace(cfg, **{name: value})
        return cfg


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = set(d) - set(known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    defaults = cls()
    for name, value in d.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple) and value is not None:
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None
