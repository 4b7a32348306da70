"""Dyadic 3D human motion prediction and ground-truth refinement toolkit."""

from .predictor import (DyadicMotionPredictor, ModelConfig, Prediction,
                        VARIANTS, build_model, load_checkpoint, restore_model,
                        save_checkpoint)
from .skeleton import DyadSample, MotionSequence, Skeleton, validate_dyad
from .training import EvalTable, TrainConfig, evaluate, train

__all__ = [
    "DyadicMotionPredictor", "ModelConfig", "Prediction", "VARIANTS",
    "build_model", "load_checkpoint", "restore_model", "save_checkpoint",
    "DyadSample", "MotionSequence", "Skeleton", "validate_dyad",
    "EvalTable", "TrainConfig", "evaluate", "train",
]

__version__ = "0.1.0"
