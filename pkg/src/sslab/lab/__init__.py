"""Scenario configuration, orchestration and the ``lab`` command line."""

from .config import ScenarioConfig, check_config, load_config, parse_config, validate_config
from .runner import build_setup, calibrate_potential, choose_t0, initial_state, run

__all__ = [
    "ScenarioConfig",
    "check_config",
    "load_config",
    "parse_config",
    "validate_config",
    "build_setup",
    "calibrate_potential",
    "choose_t0",
    "initial_state",
    "run",
]
