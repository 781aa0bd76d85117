"""Reverse-mode autodiff engine: tensors, primitives, optimizer, gradcheck."""

from . import functional
from .gradcheck import GradcheckReport, gradcheck, run_primitive_suite
from .optim import AdamW, NonFiniteGradientError
from .tensor import ShapeError, Tensor, concat, matmul

__all__ = [
    "AdamW",
    "GradcheckReport",
    "NonFiniteGradientError",
    "ShapeError",
    "Tensor",
    "concat",
    "functional",
    "gradcheck",
    "matmul",
    "run_primitive_suite",
]
