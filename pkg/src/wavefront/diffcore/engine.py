"""Program evaluation, reverse-mode gradients and a finite-difference oracle.

A *program* is any callable ``program(inputs, params) -> Tensor`` built from
:mod:`wavefront.diffcore.ops`. ``params`` maps names to :class:`Parameter`.
"""

from __future__ import annotations

import warnings
from typing import Callable, Dict, Mapping

import numpy as np

from .tensor import NonFiniteError, Parameter, ShapeError, Tensor, backprop, no_grad

Program = Callable[..., Tensor]
GradientMap = Dict[str, np.ndarray]


def _check_finite(out: Tensor) -> Tensor:
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite value in output of op {out.op!r}")
    return out


def evaluate(program: Program, inputs, params: Mapping[str, Parameter]) -> Tensor:
    """Run ``program`` forward without recording a graph."""
    with no_grad():
        out = program(inputs, params)
    return _check_finite(out)


def gradient(program: Program, inputs, params: Mapping[str, Parameter]) -> GradientMap:
    """Exact reverse-mode gradient of a scalar program for each trainable parameter.

    Parameters not reachable from the output get a zero gradient and a
    warning.
    """
    trainable = {name: p for name, p in params.items() if p.trainable}
    for p in trainable.values():
        p.value.grad = None
    out = _check_finite(program(inputs, params))
    if out.size != 1:
        raise ShapeError("gradient", f"program output must be scalar, got shape {out.shape}")
    backprop(out)
    grads = {}
    for name, p in trainable.items():
        if p.value.grad is None:
            warnings.warn(f"parameter {name!r} is unreachable from the output; gradient set to zero")
            grads[name] = np.zeros(p.shape)
        else:
            grads[name] = p.value.grad
        p.value.grad = None
    return grads


def finite_diff_gradient(program: Program, inputs, params: Mapping[str, Parameter],
                         eps: float = 1e-4) -> GradientMap:
    """Central-difference estimate ``(f(x + eps) - f(x - eps)) / (2 eps)`` per coordinate.

    Constraints are not applied to the perturbed values.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    grads = {}
    for name, p in params.items():
        if not p.trainable:
            continue
        flat = p.value.data.reshape(-1)
        est = np.zeros(flat.size)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = evaluate(program, inputs, params).item()
            flat[i] = original - eps
            down = evaluate(program, inputs, params).item()
            flat[i] = original
            est[i] = (up - down) / (2.0 * eps)
        grads[name] = est.reshape(p.shape)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """``||a - b|| / max(||a||, ||b||, floor)``, the gradient-check metric."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
