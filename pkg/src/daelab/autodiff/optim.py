"""Adam with bias correction and the piecewise learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Parameter

SCHEDULE_EPOCHS = 100
WARMUP_LR = 1e-4
# (first epoch at rate, rate); epoch 0 is the warmup epoch
SCHEDULE = ((1, 1e-3), (33, 1e-4), (66, 1e-5))


def lr_at_epoch(epoch: int) -> float:
    """Learning rate for a 0-based epoch of the 100-epoch schedule."""
    if not 0 <= epoch < SCHEDULE_EPOCHS:
        raise ValueError(f"epoch {epoch} outside [0, {SCHEDULE_EPOCHS})")
    lr = WARMUP_LR
    for start, rate in SCHEDULE:
        if epoch >= start:
            lr = rate
    return lr


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], state: AdamState, lr: float) -> AdamState:
    """One in-place Adam update of every trainable parameter.

    Parameters are keyed by name in the moment tables, so names must be
    unique. Frozen parameters are skipped without reading their gradients.
    """
    active = [p for p in params if p.trainable]
    for p in active:
        if p.grad is None:
            raise ValueError(f"parameter {p.name!r} has no gradient")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in active:
        g = p.grad
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.data.dtype)
    return state
