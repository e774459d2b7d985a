"""Urban region embeddings with coarsened graph attention pooling."""
from .config import TrainingConfig
from .data import (
    DataError,
    DownstreamLabels,
    UrbanRegionGraph,
    generate_synthetic_city,
    load_city_dataset,
    memory_accounting,
    save_city_dataset,
)
from .evaluation import evaluate_landuse, evaluate_regression_task
from .trainer import Checkpoint, embed, run_ablation_suite, train

__all__ = [
    "Checkpoint",
    "DataError",
    "DownstreamLabels",
    "TrainingConfig",
    "UrbanRegionGraph",
    "embed",
    "evaluate_landuse",
    "evaluate_regression_task",
    "generate_synthetic_city",
    "load_city_dataset",
    "memory_accounting",
    "run_ablation_suite",
    "save_city_dataset",
    "train",
]
