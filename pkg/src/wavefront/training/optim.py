"""Warmup-cosine learning-rate schedule and the AdamW update."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping

import numpy as np

from ..diffcore import Parameter, ShapeError


@dataclass(frozen=True)
class Schedule:
    base_lr: float = 5e-4
    warmup_steps: int = 0
    total_steps: int = 1

    def __post_init__(self):
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise ValueError(f"need 0 <= warmup_steps ({self.warmup_steps}) <= total_steps ({self.total_steps})")

    @classmethod
    def for_run(cls, total_steps: int, warmup_frac: float = 0.05, base_lr: float = 5e-4) -> "Schedule":
        return cls(base_lr, int(round(warmup_frac * total_steps)), total_steps)


def lr_at(step: int, schedule: Schedule) -> float:
    """Linear ramp ``0 -> base_lr`` over the warmup, then cosine decay to 0 at ``total_steps``."""
    if not 0 <= step <= schedule.total_steps:
        raise ValueError(f"step {step} outside [0, {schedule.total_steps}]")
    if step < schedule.warmup_steps:
        return schedule.base_lr * step / schedule.warmup_steps
    span = schedule.total_steps - schedule.warmup_steps
    if span == 0:
        return schedule.base_lr
    progress = (step - schedule.warmup_steps) / span
    return schedule.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def decays_by_default(name: str) -> bool:
    """Weight decay hits dense weight matrices and the bilinear form only."""
    return name.startswith(("encoder.", "head.")) and (name.endswith(".weight") or name == "head.bilinear")


@dataclass
class OptimizerState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decays: Callable[[str], bool] = decays_by_default

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("optimizer step must be >= 0")


def adamw_step(params: Mapping[str, Parameter], grads: Mapping[str, np.ndarray],
               state: OptimizerState, lr: float) -> None:
    """One bias-corrected AdamW update, in place, followed by constraint projection.

    Only parameters that are trainable and present in ``grads`` move.
    Parameters are visited in sorted name order so runs are reproducible.
    """
    for name in sorted(grads):
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != params[name].shape:
            raise ShapeError("adamw_step", f"{name}: gradient {g.shape} vs parameter {params[name].shape}")
    t = state.step + 1
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(grads):
        p = params[name]
        if not p.trainable:
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name], state.v[name] = m, v
        old = p.data
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new = old - lr * update
        if state.weight_decay and state.decays(name):
            new = new - lr * state.weight_decay * old
        p.value.data = new
        p.project()
    state.step = t
