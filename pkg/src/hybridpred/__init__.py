"""Hybrid learned and planned trajectory prediction for two interacting vehicles."""

from .cvae import CVAE
from .irl import CostWeights, MaxEntIRL, train_irl
from .pipeline import HybridPredictor, PredictionConfig, RatioState, predict_step
from .scenario import corner_case_suite, generate_dataset
from .scene import Demonstration, Scene

__version__ = "0.1.0"

__all__ = [
    "CVAE",
    "CostWeights",
    "MaxEntIRL",
    "train_irl",
    "HybridPredictor",
    "PredictionConfig",
    "RatioState",
    "predict_step",
    "corner_case_suite",
    "generate_dataset",
    "Demonstration",
    "Scene",
]
