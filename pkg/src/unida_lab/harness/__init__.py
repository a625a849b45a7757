"""Configuration, training runs, sweeps, CSV/SVG output and the command line."""

from .config import ConfigError, ExperimentConfig, config_hash, load_config, parse_config
from .train import RunRecord, train_unida

__all__ = ["ConfigError", "ExperimentConfig", "RunRecord", "config_hash", "load_config", "parse_config", "train_unida"]
