"""
TwinFormer Package

Hierarchical sparse-attention forecasting of multivariate time series, with
its own numpy autodiff, training loop and command-line harness.
"""

__version__ = "1.0.0"
__author__ = "TwinFormer Team"
__description__ = "Patch-level sparse attention time-series forecaster"

from .config import DataConfig, ModelConfig, RunConfig, TrainConfig, load_run_config
from .errors import CheckpointError, ConfigError, DataError, NumericError, TwinFormerError
from .model import TwinFormerParams, forward, predict_window

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataConfig",
    "DataError",
    "ModelConfig",
    "NumericError",
    "RunConfig",
    "TrainConfig",
    "TwinFormerError",
    "TwinFormerParams",
    "forward",
    "load_run_config",
    "predict_window",
]
