"""Run configuration: one nested dataclass tree, strictly parsed.

Unknown keys are rejected with the list of accepted ones, so a typo in a
config file fails loudly instead of silently training with defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .generator import GeneratorConfig
from .maskgen import MaskConfig
from .training import TrainingConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    # runs default to float32: single precision doubles training throughput
    # and the library-level float64 default stays for numerics work
    precision: str = "float32"
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    mask: MaskConfig = field(default_factory=MaskConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)


def _coerce(name: str, current, value):
    if dataclasses.is_dataclass(current):
        if not isinstance(value, dict):
            raise ConfigError(f"{name}: expected a mapping, got {type(value).__name__}")
        return _apply(current, value, name)
    if isinstance(current, bool) or isinstance(value, bool):
        raise ConfigError(f"{name}: unexpected boolean")
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {type(value).__name__}")
        return tuple(value)
    if isinstance(current, int) and not isinstance(current, bool):
        if not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(current, float):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(current, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{name}: unsupported config value {value!r}")


def _apply(obj, data: dict, path: str):
    names = [f.name for f in dataclasses.fields(obj)]
    for key, value in data.items():
        if key not in names:
            where = path or type(obj).__name__
            raise ConfigError(
                f"unknown key {key!r} in {where}; accepted: {', '.join(sorted(names))}"
            )
        qualified = f"{path}.{key}" if path else key
        setattr(obj, key, _coerce(qualified, getattr(obj, key), value))
    return obj


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    return _apply(RunConfig(), data, "")


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"{path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON: {e}") from e
    return config_from_dict(data)
