"""Pooling-placement search with a balanced mixture of SuperNets."""

from .config import ExperimentConfig
from .space import PoolingConfig, SearchSpace, enumerate_configs, space_size

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "PoolingConfig",
    "SearchSpace",
    "enumerate_configs",
    "space_size",
    "__version__",
]
