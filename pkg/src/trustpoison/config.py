"""Versioned constants file and environment overrides."""

from __future__ import annotations

import copy
import json
import os
from functools import lru_cache
from pathlib import Path
from typing import Any

from trustpoison.errors import ConfigError

CONSTANTS_VERSION = 1
CONSTANTS_ENV = "TRUSTPOISON_CONSTANTS"
DEFAULT_CONSTANTS_PATH = Path(__file__).with_name("constants.json")

_REQUIRED_SECTIONS = (
    "lidar",
    "grid",
    "surrogate",
    "fusion",
    "views",
    "placement",
    "cad",
    "mate",
    "lucia",
    "made",
    "mitigation",
    "deployment",
)


def _read(path: Path) -> dict[str, Any]:
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read constants file ({exc.strerror})", str(path)) from exc
    try:
        data = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(exc.msg, str(path), exc.lineno) from exc
    if not isinstance(data, dict):
        raise ConfigError("constants file must hold a JSON object", str(path))
    return data


def _merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_constants(path: str | Path | None = None) -> dict[str, Any]:
    """Load the shipped constants, layered with an override file.

    The override is ``path`` when given, else the file named by the
    ``TRUSTPOISON_CONSTANTS`` environment variable. Override files may be
    partial; they are merged section by section over the defaults.
    """
    override = path if path is not None else os.environ.get(CONSTANTS_ENV)
    return copy.deepcopy(_load(str(override) if override else None))


@lru_cache(maxsize=8)
def _load(override: str | None) -> dict[str, Any]:
    constants = _read(DEFAULT_CONSTANTS_PATH)
    if override:
        constants = _merge(constants, _read(Path(override)))
    version = constants.get("version")
    if version != CONSTANTS_VERSION:
        raise ConfigError(
            f"unsupported constants version {version!r} (expected {CONSTANTS_VERSION})",
            override or str(DEFAULT_CONSTANTS_PATH),
        )
    missing = [name for name in _REQUIRED_SECTIONS if name not in constants]
    if missing:
        raise ConfigError(f"constants file lacks sections: {', '.join(missing)}", override)
    return constants


def write_constants(constants: dict[str, Any], path: str | Path) -> Path:
    """Write a full constants record (used by the calibration step)."""
    out = Path(path)
    out.write_text(json.dumps(constants, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    _load.cache_clear()
    return out
