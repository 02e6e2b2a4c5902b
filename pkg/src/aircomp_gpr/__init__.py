"""Distributed Gaussian process regression with over-the-air aggregation."""

from .gp import Hyperparams, LocalDataset, PredictionResult, SingularMatrixError
from .poe import ExpertPool, LocalPrediction

__version__ = "0.1.0"

__all__ = [
    "ExpertPool",
    "Hyperparams",
    "LocalDataset",
    "LocalPrediction",
    "PredictionResult",
    "SingularMatrixError",
]
