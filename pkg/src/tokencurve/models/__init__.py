"""Run-time and curve predictors: boosted trees, MLP, and graph network."""
from .artifact import (
    ModelArtifact,
    attach_gbrt_predictions,
    deserialize,
    forced_curve_artifact,
    predict,
    serialize,
    train_gbrt_artifact,
    train_network,
)
from .data import ParamScales, TrainingExample, augment, build_examples, fit_targets, gbrt_rows
from .gbrt import GBRTConfig, GBRTModel, allocation_grid, gbrt_curve_pl, gbrt_curve_ss, train_gbrt
from .losses import LossTargets, loss_and_grad
from .training import TrainingConfig, evaluate_loss, fit_network, tune_runtime_weight

__all__ = [
    "GBRTConfig",
    "GBRTModel",
    "LossTargets",
    "ModelArtifact",
    "ParamScales",
    "TrainingConfig",
    "TrainingExample",
    "allocation_grid",
    "attach_gbrt_predictions",
    "augment",
    "build_examples",
    "deserialize",
    "evaluate_loss",
    "fit_network",
    "fit_targets",
    "forced_curve_artifact",
    "gbrt_curve_pl",
    "gbrt_curve_ss",
    "gbrt_rows",
    "loss_and_grad",
    "predict",
    "serialize",
    "train_gbrt",
    "train_gbrt_artifact",
    "train_network",
    "tune_runtime_weight",
]
