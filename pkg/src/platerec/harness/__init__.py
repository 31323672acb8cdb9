"""Training, evaluation, persistence and command-line tooling."""

from .checkpoint import load_weights, save_weights
from .evaluate import bench_fps, evaluate, majority_vote, recognize
from .train import TrainConfig, train_corner_model, train_recognizer

__all__ = [
    "TrainConfig",
    "bench_fps",
    "evaluate",
    "load_weights",
    "majority_vote",
    "recognize",
    "save_weights",
    "train_corner_model",
    "train_recognizer",
]
