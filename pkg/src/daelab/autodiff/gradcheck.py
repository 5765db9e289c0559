"""Central-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import NumericError, Tensor


def numerical_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray],
                       h: float = 1e-6) -> list[np.ndarray]:
    grads = []
    for k, a in enumerate(arrays):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gf = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            fp = float(fn(*[Tensor(x) for x in arrays]).data)
            flat[i] = old - h
            fm = float(fn(*[Tensor(x) for x in arrays]).data)
            flat[i] = old
            gf[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def analytic_gradient(fn: Callable[..., Tensor], arrays: Sequence[np.ndarray]) -> list[np.ndarray]:
    inputs = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*inputs)
    out.backward()
    return [np.zeros_like(a) if t.grad is None else t.grad for a, t in zip(arrays, inputs)]


def grad_check(fn: Callable[..., Tensor], *points: np.ndarray, h: float = 1e-6,
               corrupt: float = 1.0) -> float:
    """Max over inputs of |analytic - numeric| / max(1, |analytic|).

    ``fn`` maps Tensors to a scalar Tensor and must be deterministic.
    ``corrupt`` scales the analytic gradient, for testing the checker itself.
    """
    arrays = [np.array(p, dtype=np.float64, copy=True) for p in points]
    ana = analytic_gradient(fn, arrays)
    num = numerical_gradient(fn, arrays, h)
    err = 0.0
    for a, n in zip(ana, num):
        a = a * corrupt
        if not (np.isfinite(a).all() and np.isfinite(n).all()):
            raise NumericError("grad_check: non-finite gradient")
        if a.size:
            err = max(err, float(np.max(np.abs(a - n) / np.maximum(1.0, np.abs(a)))))
    return err
