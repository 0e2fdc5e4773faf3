"""Minimal reverse-mode tensor core: ops, layers, optimizers, schedule, checkpoints."""
from . import ops
from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .layers import Conv2d, ConvTranspose2d, Linear, Module
from .ops import (
    ShapeError,
    avgpool2d,
    concat,
    conv2d,
    conv2d_transpose,
    gelu,
    linear,
    log_softmax,
    sigmoid,
)
from .optim import LARS, Adam, TrainingError
from .schedule import ScheduleConfig, lr_at
from .tensor import GraphError, Parameter, Tensor, as_tensor, no_grad

__all__ = [
    "Adam",
    "CheckpointError",
    "Conv2d",
    "ConvTranspose2d",
    "GraphError",
    "LARS",
    "Linear",
    "Module",
    "Parameter",
    "ScheduleConfig",
    "ShapeError",
    "Tensor",
    "TrainingError",
    "as_tensor",
    "avgpool2d",
    "concat",
    "conv2d",
    "conv2d_transpose",
    "gelu",
    "linear",
    "load_checkpoint",
    "log_softmax",
    "lr_at",
    "no_grad",
    "ops",
    "read_manifest",
    "save_checkpoint",
    "sigmoid",
]
