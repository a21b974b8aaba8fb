"""Dynamic per-mini-batch task weighting for two-task networks."""

from .data import Dataset, Splits, SplitBatcher, ToySpec, generate_toy, load_csv, split, toy_splits
from .errors import (
    ConfigError,
    ContractError,
    DegenerateMetricError,
    DomainError,
    HydaError,
    ShapeError,
    StrategyError,
    TrainingDiverged,
)
from .multitask import Batch, GradientBundle, MultiTaskNet
from .nn import Loss, Metric, Mlp, metric_value
from .tensor_core import Rng
from .trainer import RunLog, TrainConfig, evaluate, train
from .weighting import HydaConfig, WeightState, make_strategy, weights_from_gains

__version__ = "0.1.0"

__all__ = [
    "Batch", "ConfigError", "ContractError", "Dataset", "DegenerateMetricError", "DomainError",
    "GradientBundle", "HydaConfig", "HydaError", "Loss", "Metric", "Mlp", "MultiTaskNet", "Rng",
    "RunLog", "ShapeError", "SplitBatcher", "Splits", "StrategyError", "ToySpec", "TrainConfig",
    "TrainingDiverged", "WeightState", "evaluate", "generate_toy", "load_csv", "make_strategy",
    "metric_value", "split", "toy_splits", "train", "weights_from_gains",
]
