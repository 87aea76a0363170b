"""Attribute localization and revision head for zero-shot classification."""

from .data_io import SynthSpec, ZSLDataset, generate_synthetic, load_dataset, save_dataset
from .estimator import ALRNClassifier
from .evaluator import EvalReport, GzslConfig, SplitSpec, evaluate, harmonic_mean
from .model import ModelConfig, ParameterSet, init_parameters, model_forward
from .objective import LossConfig, loss_and_grad
from .presets import PRESETS, RunConfig
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ALRNClassifier", "EvalReport", "GzslConfig", "LossConfig", "ModelConfig",
    "PRESETS", "ParameterSet", "RunConfig", "SplitSpec", "SynthSpec", "TrainConfig",
    "ZSLDataset", "evaluate", "generate_synthetic", "harmonic_mean", "init_parameters",
    "load_dataset", "loss_and_grad", "model_forward", "save_dataset", "train",
]
