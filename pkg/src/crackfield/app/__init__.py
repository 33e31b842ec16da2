"""Configuration, scenario runner, metrics and CLI."""

from .config import ConfigError, Scenario, format_config, load_config, parse_config, shipped_config
from .metrics import NoPeakError, band_width, extract_metrics, find_peak
from .runner import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_SOLVER,
    RunOutcome,
    build_mesh,
    read_curve,
    read_nodal_field,
    run_scenario,
)

__all__ = [
    "ConfigError",
    "Scenario",
    "format_config",
    "load_config",
    "parse_config",
    "shipped_config",
    "NoPeakError",
    "band_width",
    "extract_metrics",
    "find_peak",
    "EXIT_CONFIG",
    "EXIT_OK",
    "EXIT_SOLVER",
    "RunOutcome",
    "build_mesh",
    "read_curve",
    "read_nodal_field",
    "run_scenario",
]
