"""Simulation framework for federated learning with local differential privacy,
robust aggregation, poisoning attacks and server-side defences."""

from .config import ExperimentConfig, parse_config
from .protocol import run_experiment

__all__ = ["ExperimentConfig", "parse_config", "run_experiment"]
__version__ = "0.1.0"
