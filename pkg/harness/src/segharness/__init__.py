"""Defect-segmentation training/evaluation harness."""

from segharness.metrics import TaskReport, confusion_matrix, scores_from_confusion
from segharness.train import TrainConfig, evaluate, train, train_with_restarts

__all__ = [
    "TaskReport",
    "TrainConfig",
    "confusion_matrix",
    "evaluate",
    "scores_from_confusion",
    "train",
    "train_with_restarts",
]

__version__ = "0.1.0"
