"""Piecewise linear unit activations with statistic-based boundary realignment."""

from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateParameterError,
    EmptyBatchError,
    IdxFormatError,
    InsufficientSamplesError,
    NonFiniteLossError,
    PwluError,
    ShapeMismatchError,
)
from .kernel import (
    FusedPwluTable,
    PwluGrads,
    PwluParams,
    backward,
    build_fused,
    forward_fused,
    forward_reference,
    init_pwlu_relu,
    interval_index,
)
from .stats import (
    AlignmentReport,
    Reservoir,
    RunningStats,
    compute_iou,
    percentile_interval,
    realign_reset,
    update_stats,
)
from .layers import Conv2d, Dense, Model, PwluActivation, Relu, Swish, build_mlp
from .optim import TrainSchedule, sgd_momentum_step
from .trainer import Trainer, train_two_phase
from .checkpoint import load_checkpoint, load_model, save_checkpoint
from .data import (
    LabeledDataset,
    export_shapes,
    gen_spirals,
    load_idx,
    load_shape_params,
    standardize,
)

__all__ = [
    "AlignmentReport",
    "CheckpointError",
    "ConfigError",
    "Conv2d",
    "DegenerateParameterError",
    "Dense",
    "EmptyBatchError",
    "IdxFormatError",
    "InsufficientSamplesError",
    "NonFiniteLossError",
    "PwluError",
    "ShapeMismatchError",
    "FusedPwluTable",
    "LabeledDataset",
    "Model",
    "PwluActivation",
    "PwluGrads",
    "PwluParams",
    "Relu",
    "Reservoir",
    "RunningStats",
    "Swish",
    "Trainer",
    "TrainSchedule",
    "backward",
    "build_fused",
    "build_mlp",
    "compute_iou",
    "export_shapes",
    "forward_fused",
    "forward_reference",
    "gen_spirals",
    "init_pwlu_relu",
    "interval_index",
    "load_checkpoint",
    "load_idx",
    "load_model",
    "load_shape_params",
    "percentile_interval",
    "realign_reset",
    "save_checkpoint",
    "sgd_momentum_step",
    "standardize",
    "train_two_phase",
    "update_stats",
]
