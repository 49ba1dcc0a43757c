"""Run configuration: TOML/JSON file sections plus command-line overrides.

Precedence is flags > file > defaults. Files use one table per section::

    [model]
    d = 64
    enable_spatial_bias = true

    [train]
    steps = 1500
    lr = 0.05

    [synth]
    task = "spatial"
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .clues import CluesConfig
from .errors import ConfigError
from .model import ModelConfig
from .spatial_bias import SpatialBiasConfig
from .synth import SynthConfig
from .temporal_adapter import TemporalAdapterConfig
from .training import TrainConfig


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    spatial: SpatialBiasConfig = field(default_factory=SpatialBiasConfig)
    adapter: TemporalAdapterConfig = field(default_factory=TemporalAdapterConfig)
    clues: CluesConfig = field(default_factory=CluesConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    train: TrainConfig = field(default_factory=TrainConfig)


_SECTIONS = ("model", "spatial", "adapter", "clues", "synth", "train")


def _apply_section(obj: Any, values: dict, section: str) -> None:
    names = {f.name for f in dataclasses.fields(obj)}
    for key, value in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        current = getattr(obj, key)
        if isinstance(current, tuple) and isinstance(value, list):
            value = tuple(value)
        setattr(obj, key, value)


def load_run_config(path: str | Path | None) -> RunConfig:
    """Read a TOML or JSON config file into a RunConfig (defaults if None)."""
    cfg = RunConfig()
    if path is None:
        return cfg
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    if path.suffix == ".json":
        data = json.loads(path.read_text(encoding="utf-8"))
    else:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a table of sections")
    for section, values in data.items():
        if section not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: section [{section}] must be a table")
        _apply_section(getattr(cfg, section), values, section)
    return cfg


def _coerce(text: str, current: Any) -> Any:
    if isinstance(current, bool):
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"cannot parse boolean from {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, tuple):
        return tuple(part.strip() for part in text.split(",") if part.strip())
    if current is None:
        try:
            return int(text)
        except ValueError:
            return text
    return text


def apply_overrides(cfg: RunConfig, assignments: list[str]) -> RunConfig:
    """Apply 'section.key=value' strings in order."""
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"override {assignment!r} must look like section.key=value")
        dotted, raw = assignment.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"override key {dotted!r} must look like section.key")
        section, key = dotted.split(".", 1)
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        target = getattr(cfg, section)
        if key not in {f.name for f in dataclasses.fields(target)}:
            raise ConfigError(f"unknown key {key!r} in section [{section}]")
        setattr(target, key, _coerce(raw, getattr(target, key)))
    return cfg
