"""Minimal reverse-mode automatic differentiation over float64 arrays."""
from . import ops
from .checkpoint import load as load_checkpoint, save as save_checkpoint
from .core import Graph, Tensor, as_tensor, backward, logsumexp, zero_grad
from .gradcheck import grad_check
from .ops import ShapeError, forward

__all__ = [
    "Graph", "ShapeError", "Tensor", "as_tensor", "backward", "forward",
    "grad_check", "load_checkpoint", "logsumexp", "ops", "save_checkpoint",
    "zero_grad",
]
