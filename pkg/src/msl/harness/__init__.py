"""Experiment plumbing: configs, seeding, runners, fitting and output."""

from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .fitting import FitError, SlopeFit, fit_rate_exponent
from .runner import AssumptionError, Report, run
from .seeding import stream, stream_id

__all__ = [
    "AssumptionError",
    "ConfigError",
    "ExperimentConfig",
    "FitError",
    "Report",
    "SlopeFit",
    "fit_rate_exponent",
    "load_config",
    "parse_config",
    "run",
    "stream",
    "stream_id",
]
