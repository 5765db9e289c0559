"""Latent-space normalisation, noise injection and variational machinery."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff.rng import Rng
from .autodiff.tensor import Parameter, ShapeError, Tensor, _send, as_tensor

BN_MOMENTUM = 0.99
NORM_EPS = 1e-3


@dataclass
class VaeHead:
    """Per-sample latent mean and log-variance, both batch x latent_units."""

    mu: Tensor
    log_var: Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ShapeError(f"mu {self.mu.shape} and log_var {self.log_var.shape} differ")


def reparameterize(head: VaeHead, rng: Rng | None = None, eps=None) -> Tensor:
    """``z = mu + exp(log_var / 2) * eps`` with ``eps ~ N(0, I)`` unless given."""
    if eps is None:
        if rng is None:
            raise ValueError("reparameterize needs an rng or explicit eps")
        eps = rng.normal(head.mu.shape, dtype=head.mu.dtype)
    eps = np.asarray(eps, dtype=head.mu.dtype)
    if eps.shape != head.mu.shape:
        raise ShapeError(f"eps {eps.shape} vs mu {head.mu.shape}")
    return head.mu + (head.log_var * 0.5).exp() * eps


def kl_term(head: VaeHead) -> Tensor:
    """KL(N(mu, sigma^2) || N(0, I)): summed over latent dims, averaged over the batch."""
    mu, lv = head.mu, head.log_var
    batch = mu.shape[0] if mu.ndim > 1 else 1
    em1 = np.expm1(lv.data)
    # expm1(x) - x >= 0 elementwise; the clip absorbs rounding only
    per = mu.data * mu.data + np.maximum(em1 - lv.data, 0.0)
    val = np.asarray(0.5 * per.sum() / batch, dtype=mu.dtype)

    def bw(g):
        _send(mu, g * mu.data / batch)
        _send(lv, g * 0.5 * em1 / batch)

    return Tensor._make(val, (mu, lv), bw, "kl_term")


# -- normalisation ---------------------------------------------------------

def _norm_axes(ndim: int) -> tuple[int, ...]:
    if ndim == 2:
        return (0,)
    if ndim == 4:
        return (0, 2, 3)
    raise ShapeError(f"batch_norm expects N x F or N x C x H x W, got {ndim}-D")


def _standardize(x: Tensor, axes: tuple[int, ...], eps: float,
                 mean: np.ndarray | None = None, var: np.ndarray | None = None):
    """Differentiable ``(x - mean) / sqrt(var + eps)``.

    With ``mean``/``var`` given they are constants; otherwise they are the
    statistics over ``axes`` and gradients flow through them.
    """
    d = x.data
    fixed = mean is not None
    if not fixed:
        mean = d.mean(axis=axes, keepdims=True)
        var = d.var(axis=axes, keepdims=True)
    inv = (1.0 / np.sqrt(var + eps)).astype(d.dtype)
    xhat = ((d - mean) * inv).astype(d.dtype)
    m = d.size // mean.size

    def bw(g):
        if fixed:
            _send(x, g * inv)
            return
        dx = inv / m * (m * g - g.sum(axis=axes, keepdims=True)
                        - xhat * (g * xhat).sum(axis=axes, keepdims=True))
        _send(x, dx)

    return Tensor._make(xhat, (x,), bw, "normalize"), mean, var


@dataclass
class BatchNormState:
    """Running statistics and affine parameters of one batch-norm layer."""

    num_features: int
    momentum: float = BN_MOMENTUM
    eps: float = NORM_EPS
    dtype: type = np.float32
    gamma: Tensor = None
    beta: Tensor = None
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    def __post_init__(self):
        if self.gamma is None:
            self.gamma = Parameter(np.ones(self.num_features, self.dtype), "gamma")
        if self.beta is None:
            self.beta = Parameter(np.zeros(self.num_features, self.dtype), "beta")
        if self.running_mean is None:
            self.running_mean = np.zeros(self.num_features, self.dtype)
        if self.running_var is None:
            self.running_var = np.ones(self.num_features, self.dtype)


def _affine_shape(ndim: int, n: int) -> tuple[int, ...]:
    return (1, n) if ndim == 2 else (1, n, 1, 1)


def batch_norm(x: Tensor, state: BatchNormState, training: bool,
               affine: bool = True) -> Tensor:
    """Per-feature (per-channel for images) standardisation.

    Training uses batch statistics and updates the running averages; eval
    uses the running averages only.
    """
    x = as_tensor(x)
    axes = _norm_axes(x.ndim)
    nf = x.shape[1]
    if nf != state.num_features:
        raise ShapeError(f"batch_norm: {nf} features, state has {state.num_features}")
    shape = _affine_shape(x.ndim, nf)
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch_norm in training mode needs a batch of at least 2")
        xhat, mean, var = _standardize(x, axes, state.eps)
        mom = state.momentum
        state.running_mean = (mom * state.running_mean + (1 - mom) * mean.reshape(-1)).astype(state.running_mean.dtype)
        state.running_var = (mom * state.running_var + (1 - mom) * var.reshape(-1)).astype(state.running_var.dtype)
    else:
        xhat, _, _ = _standardize(x, axes, state.eps,
                                  state.running_mean.reshape(shape).astype(x.dtype),
                                  state.running_var.reshape(shape).astype(x.dtype))
    if not affine:
        return xhat
    return xhat * state.gamma.reshape(shape) + state.beta.reshape(shape)


def layer_norm(x: Tensor, scale: Tensor | None = None, shift: Tensor | None = None,
               eps: float = NORM_EPS) -> Tensor:
    """Per-sample standardisation over every non-batch axis; mode independent."""
    x = as_tensor(x)
    axes = tuple(range(1, x.ndim))
    xhat, _, _ = _standardize(x, axes, eps)
    out = xhat
    if scale is not None:
        out = out * scale
    if shift is not None:
        out = out + shift
    return out


@dataclass
class SpectralNormState:
    """Persistent left-singular-vector estimate for power iteration."""

    u: np.ndarray
    n_power_iterations: int = 1

    @classmethod
    def init(cls, rows: int, rng: Rng, n_power_iterations: int = 1) -> "SpectralNormState":
        u = rng.normal((rows,))
        # float32 so checkpoints (f32 payloads) restore it bit-exactly
        return cls((u / np.linalg.norm(u)).astype(np.float32), n_power_iterations)


def _unit(v: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("spectral_normalize: power iteration hit a zero vector")
    return v / n


def power_iterate(w: np.ndarray, state: SpectralNormState, n: int | None = None) -> None:
    w = np.asarray(w, dtype=np.float64)
    u = state.u.astype(np.float64)
    for _ in range(state.n_power_iterations if n is None else n):
        v = _unit(w.T @ u)
        u = _unit(w @ v)
    state.u = u.astype(state.u.dtype)


def spectral_normalize(weight: Tensor, state: SpectralNormState, training: bool = True) -> Tensor:
    """``W / sigma`` where ``sigma = ||W^T u||`` from the persistent ``u``.

    In training ``u`` is first advanced by the configured number of power
    iterations. ``u`` is a constant of the backward pass, which makes the
    gradient of ``sigma`` exactly ``u v^T``.
    """
    weight = as_tensor(weight)
    if weight.ndim != 2:
        weight2 = weight.reshape(weight.shape[0], -1)
    else:
        weight2 = weight
    w = weight2.data
    if not np.any(w):
        raise ValueError("spectral_normalize: zero matrix has no dominant direction")
    if state.u.shape != (w.shape[0],):
        raise ShapeError(f"spectral_normalize: u {state.u.shape} vs weight rows {w.shape[0]}")
    if training:
        power_iterate(w, state)
    u = state.u.astype(w.dtype)
    wtu = w.T @ u
    sigma = np.sqrt(wtu @ wtu)
    if sigma == 0:
        raise ValueError("spectral_normalize: u is orthogonal to the row space of W")
    v = wtu / sigma
    out = w / sigma

    def bw(g):
        # d(W/s) with ds = u v^T dW
        _send(weight2, g / sigma - np.outer(u, v) * (g * w).sum() / (sigma * sigma))

    res = Tensor._make(out, (weight2,), bw, "spectral_normalize")
    return res if weight.ndim == 2 else res.reshape(weight.shape)


def gaussian_noise(x: Tensor, sigma: float, rng: Rng | None, training: bool) -> Tensor:
    """Additive N(0, sigma^2) noise at train time; identity otherwise."""
    if sigma < 0:
        raise ValueError("noise sigma must be non-negative")
    x = as_tensor(x)
    if not training or sigma == 0:
        return x
    if rng is None:
        raise ValueError("gaussian_noise in training mode needs an rng")
    return x + sigma * rng.normal(x.shape, dtype=x.dtype)
