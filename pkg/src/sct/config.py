"""Layered configuration file handling.

One YAML file with sections evaluation / perturbation / termination /
loop / memory; every key maps onto a parameter dataclass field and falls
back to that field's default. CLI flags override file values. Unknown
keys and constraint violations raise ConfigError naming the offending
key.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import yaml

from .errors import ConfigError, ValidationError
from .evaluation import EvalParams
from .loop import LoopConfig
from .memory import DEFAULT_ENTRY_CAPACITY, DEFAULT_IMAGE_CAPACITY
from .perturbation import PerturbParams
from .termination import TermParams

_SECTIONS = ("evaluation", "perturbation", "termination", "loop", "memory")

_EVAL_KEYS = (
    "curvature_weight",
    "torsion_weight",
    "stability_decay",
    "jerk_sensitivity",
    "rotation_weight",
    "gate_weights",
    "gate_threshold",
)
_PERTURB_KEYS = (
    "gamma",
    "gravity_gain",
    "noise_gain",
    "temperature",
    "isotropic_scale",
    "ridge",
    "action_bounds",
    "min_effective_weight",
)
_TERM_KEYS = ("match_threshold", "resolution")
_LOOP_KEYS = (
    "eval_window",
    "max_steps",
    "dt",
    "correction_enabled",
    "termination_enabled",
    "feature_side",
)
_MEMORY_KEYS = ("entry_capacity", "image_capacity")


@dataclass(frozen=True)
class MemoryParams:
    entry_capacity: int = DEFAULT_ENTRY_CAPACITY
    image_capacity: int = DEFAULT_IMAGE_CAPACITY


@dataclass(frozen=True)
class AppConfig:
    loop: LoopConfig
    memory: MemoryParams


def _section(data: dict, name: str, allowed) -> dict:
    raw = data.get(name) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"section '{name}' must be a mapping")
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in section '{name}'")
    return raw


def _coerce(section: str, raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        if key == "gate_weights":
            value = tuple(float(v) for v in value)
        elif key == "resolution":
            value = (int(value[0]), int(value[1]))
        elif key == "action_bounds":
            value = tuple((float(lo), float(hi)) for lo, hi in value)
        elif key in ("eval_window", "max_steps", "feature_side", "entry_capacity", "image_capacity"):
            value = int(value)
        elif key in ("correction_enabled", "termination_enabled"):
            if not isinstance(value, bool):
                raise ConfigError(f"key '{key}' in section '{section}' must be a boolean")
        else:
            value = float(value)
        out[key] = value
    return out


def build_config(data: dict | None) -> AppConfig:
    """Build the full configuration from a parsed mapping (possibly empty)."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a mapping of sections")
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(f"unknown section '{key}' (expected one of {', '.join(_SECTIONS)})")
    try:
        evaluation = EvalParams(**_coerce("evaluation", _section(data, "evaluation", _EVAL_KEYS)))
        perturbation = PerturbParams(
            **_coerce("perturbation", _section(data, "perturbation", _PERTURB_KEYS))
        )
        termination = TermParams(**_coerce("termination", _section(data, "termination", _TERM_KEYS)))
        loop = LoopConfig(
            evaluation=evaluation,
            perturbation=perturbation,
            termination=termination,
            **_coerce("loop", _section(data, "loop", _LOOP_KEYS)),
        )
        memory = MemoryParams(**_coerce("memory", _section(data, "memory", _MEMORY_KEYS)))
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration value: {exc}") from exc
    return AppConfig(loop=loop, memory=memory)


def load_config(path: str | Path | None) -> AppConfig:
    """Load the configuration file, or defaults when path is None."""
    if path is None:
        return build_config({})
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    return build_config(data)
