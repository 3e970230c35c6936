"""Small reverse-mode autodiff kernel: tensors, layers, Adam, gradient checks."""
from . import ops
from .gradcheck import NonFiniteLoss, grad_check
from .layers import (AttentionPool, BiGRU, Dense, Embedding, EmptySequence, GRU, IndivisibleDim,
                     LayerNorm, MultiHeadAttention, OddUnits)
from .module import Module
from .optim import Adam, AdamState, adam_step
from .rng import RngStreams
from .tensor import (Parameter, ShapeMismatch, Tensor, default_dtype, get_mode, no_grad,
                     numeric_mode, set_mode)

__all__ = [
    "ops", "grad_check", "NonFiniteLoss", "AttentionPool", "BiGRU", "Dense", "Embedding",
    "EmptySequence", "GRU", "IndivisibleDim", "LayerNorm", "MultiHeadAttention", "OddUnits",
    "Module", "Adam", "AdamState", "adam_step", "RngStreams", "Parameter", "ShapeMismatch",
    "Tensor", "default_dtype", "get_mode", "no_grad", "numeric_mode", "set_mode",
]
