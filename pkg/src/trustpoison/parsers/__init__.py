"""Readers and writers for meshes, vertex masks and scenario files."""

from trustpoison.parsers.obj import load_mask, load_obj, parse_obj, save_mask, save_obj
from trustpoison.parsers.scenario import (
    ScenarioConfig,
    bundled_scenario,
    load_scenario,
    parse_scenario,
    save_scenario,
)

__all__ = [
    "ScenarioConfig",
    "bundled_scenario",
    "load_mask",
    "load_obj",
    "load_scenario",
    "parse_obj",
    "parse_scenario",
    "save_mask",
    "save_obj",
    "save_scenario",
]
