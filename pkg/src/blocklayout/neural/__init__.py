"""Minimal float64 autodiff engine: tensors, layers, losses, Adam."""

from .tensor import (
    Tensor, TapeError, concat, conv2d, conv2d_transpose, log_softmax,
    softmax,
)
from .layers import (
    Conv2d, ConvTranspose2d, Dense, GraphAttention, MLPHead, Module,
)
from .losses import cross_entropy, kl_standard_normal, l2_loss
from .optim import Adam

__all__ = [
    "Tensor", "TapeError", "concat", "conv2d", "conv2d_transpose",
    "softmax", "log_softmax",
    "Module", "Dense", "Conv2d", "ConvTranspose2d", "GraphAttention",
    "MLPHead",
    "l2_loss", "cross_entropy", "kl_standard_normal",
    "Adam",
]
