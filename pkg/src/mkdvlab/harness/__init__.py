"""Configuration, statistical batteries and the ``lab`` command line."""

from .config import ConfigError, ExperimentConfig, load
from .runner import run

__all__ = ["ConfigError", "ExperimentConfig", "load", "run"]
