"""Minimal reverse-mode differentiation over dense float64 tensors."""

from . import ops
from .engine import GradientMap, evaluate, finite_diff_gradient, gradient, relative_error
from .tensor import (NonFiniteError, Parameter, ShapeError, Tensor, as_tensor, backprop,
                     grad_enabled, no_grad)

__all__ = [
    "ops", "Tensor", "Parameter", "ShapeError", "NonFiniteError", "as_tensor", "backprop",
    "no_grad", "grad_enabled", "evaluate", "gradient", "finite_diff_gradient",
    "relative_error", "GradientMap",
]
