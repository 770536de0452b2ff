"""Two-stream time-to-collision regression with trend/seasonality decomposition,
non-stationarity rescaling and multi-scale segment attention, on a small
reverse-mode autodiff engine."""

from .config import ExperimentConfig, TrainConfig
from .datagen import DataConfig
from .spatial import SpatialConfig
from .temporal import CollideNet, ModelConfig, TemporalConfig, Toggles

__all__ = [
    "CollideNet",
    "DataConfig",
    "ExperimentConfig",
    "ModelConfig",
    "SpatialConfig",
    "TemporalConfig",
    "Toggles",
    "TrainConfig",
]
