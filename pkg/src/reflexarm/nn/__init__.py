"""Minimal reverse-mode autodiff on numpy arrays, sized for this project.

Graphs are recorded only inside a Tape context; everything else runs as
plain numpy, so inference-heavy loops pay no tracing cost.
"""
from . import ops
from .checkpoint import (CheckpointError, load_checkpoint,
                         read_checkpoint_extra, save_checkpoint)
from .layers import (MLP, Conv2d, ConvTranspose2d, Dense, InstanceNorm,
                     Module, ResidualBlock)
from .optim import Adam
from .tensor import GraphError, Parameter, Tape, Tensor, backward, no_grad

__all__ = [
    "ops", "Tensor", "Parameter", "Tape", "GraphError", "no_grad", "backward",
    "Module", "Dense", "Conv2d", "ConvTranspose2d", "InstanceNorm",
    "ResidualBlock", "MLP", "Adam",
    "save_checkpoint", "load_checkpoint", "read_checkpoint_extra",
    "CheckpointError",
]
