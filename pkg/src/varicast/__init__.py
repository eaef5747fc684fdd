"""Probabilistic time-series forecasting with a multi-scale-attention
conditional VAE, explicit uncertainty heads, and calibrated multi-step
rollouts. Pure numpy, with its own reverse-mode autodiff tape.
"""

from .config import RunConfig, load_config, load_dataset, parse_config
from .data import Schema, SeriesTable, make_windows, synth_series
from .forecast import Forecaster, ForecastResult, evaluate_split
from .metrics import MetricsReport, build_report
from .model import ForecastModel, ModelConfig, compute_losses, model_grad_check
from .tensor import Tape, Tensor, backward, grad_check
from .train import RunState, TrainResult, restore, train

__version__ = "0.1.0"

__all__ = [
    "Forecaster",
    "ForecastModel",
    "ForecastResult",
    "MetricsReport",
    "ModelConfig",
    "RunConfig",
    "RunState",
    "Schema",
    "SeriesTable",
    "Tape",
    "Tensor",
    "TrainResult",
    "backward",
    "build_report",
    "compute_losses",
    "evaluate_split",
    "grad_check",
    "load_config",
    "load_dataset",
    "make_windows",
    "model_grad_check",
    "parse_config",
    "restore",
    "synth_series",
    "train",
    "__version__",
]
