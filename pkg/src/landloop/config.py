"""Flat key-value config files (INI) for tasks, sessions, and experiment grids.

One file can carry any subset of the sections below; missing sections fall
back to defaults. Field names match the dataclasses exactly, so a config
documents itself against the code.

    [task]      TaskConfig          [camera]   CameraConfig
    [pilot]     PilotConfig         [trainer]  TrainerConfig
    [session]   SessionConfig       [ppo]      PPOConfig
    [grid]      ExperimentGrid

Lists are comma-separated; enums use their string values.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
from enum import Enum

from .camera import CameraConfig
from .errors import ConfigError
from .pilot import PilotConfig
from .ppo import PPOConfig
from .session import ActorKind, SessionConfig, SessionMode, TrainerConfig
from .sim import TaskConfig

SECTION_TYPES = {
    "task": TaskConfig,
    "camera": CameraConfig,
    "pilot": PilotConfig,
    "trainer": TrainerConfig,
    "session": SessionConfig,
    "ppo": PPOConfig,
}

_ENUM_FIELDS = {
    ("session", "mode"): SessionMode,
    ("session", "actor"): ActorKind,
}


def _format_value(value) -> str:
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(text: str, field_type, section: str, name: str):
    text = text.strip()
    enum_type = _ENUM_FIELDS.get((section, name))
    if enum_type is not None:
        return enum_type(text)
    if field_type is bool:
        if text.lower() in ("true", "1", "yes"):
            return True
        if text.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"[{section}] {name}: expected a boolean, got {text!r}")
    if field_type is int:
        return int(text)
    if field_type is float:
        return float(text)
    if field_type is str:
        return text
    raise ConfigError(f"[{section}] {name}: unsupported field type {field_type}")


def dataclass_to_section(obj, parser: configparser.ConfigParser, section: str) -> None:
    parser.add_section(section)
    for f in dataclasses.fields(obj):
        parser.set(section, f.name, _format_value(getattr(obj, f.name)))


def section_to_dataclass(parser: configparser.ConfigParser, section: str, cls):
    """Build cls from a section, defaulting absent keys; unknown keys are errors."""
    if not parser.has_section(section):
        return cls()
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for name, raw in parser.items(section):
        if name not in field_map:
            raise ConfigError(f"[{section}] unknown key {name!r}")
        ftype = field_map[name].type
        if isinstance(ftype, str):  # postponed annotations
            ftype = {"int": int, "float": float, "str": str, "bool": bool}.get(ftype, str)
        try:
            kwargs[name] = _parse_value(raw, ftype, section, name)
        except ValueError as exc:
            raise ConfigError(f"[{section}] {name}: {exc}") from exc
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def write_configs(path, **sections) -> None:
    """Write named config objects (task=..., camera=..., ...) to one INI file."""
    parser = configparser.ConfigParser()
    for name, obj in sections.items():
        if obj is None:
            continue
        dataclass_to_section(obj, parser, name)
    with open(path, "w") as fh:
        parser.write(fh)


def read_configs(path) -> dict:
    """Read every known section from an INI file into config objects."""
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return {name: section_to_dataclass(parser, name, cls)
            for name, cls in SECTION_TYPES.items()}


def canonical_text(**sections) -> str:
    parser = configparser.ConfigParser()
    for name in sorted(sections):
        if sections[name] is not None:
            dataclass_to_section(sections[name], parser, name)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def config_hash(**sections) -> str:
    """Short stable digest of a config combination, stored in checkpoints."""
    return hashlib.sha256(canonical_text(**sections).encode("utf-8")).hexdigest()[:16]
