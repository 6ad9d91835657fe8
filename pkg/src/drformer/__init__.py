"""Multi-scale patch transformer with a sparse dynamic tokenizer for long-horizon forecasting."""

from .dataset import RawSeries, SyntheticSpec, WindowedDataset, generate_synthetic, load_csv, split_and_standardize
from .model import ForecastModel, ModelConfig, forward, mse_loss
from .training import MetricsReport, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ForecastModel",
    "MetricsReport",
    "ModelConfig",
    "RawSeries",
    "SyntheticSpec",
    "WindowedDataset",
    "evaluate",
    "forward",
    "generate_synthetic",
    "load_csv",
    "mse_loss",
    "split_and_standardize",
    "train",
]
