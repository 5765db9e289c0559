"""Training loop, reconstruction and dataset encoding."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .autodiff.ops import bce_loss
from .autodiff.optim import AdamState, adam_step, lr_at_epoch
from .autodiff.rng import Rng
from .autodiff.tensor import NumericError, Tensor
from .io.datasets import Dataset
from .model import Autoencoder, BatchNorm
from .regularization import VaeHead, kl_term, reparameterize

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    """Loss or activations went non-finite."""


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    beta: float = 0.01
    seed: int = 0
    kl_reduction: str = "sum"  # over latent dims; always mean over the batch

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.kl_reduction not in ("sum", "mean"):
            raise ValueError("kl_reduction must be 'sum' or 'mean'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        extra = set(d) - {f.name for f in fields(cls)}
        if extra:
            raise ValueError(f"unknown TrainConfig fields: {sorted(extra)}")
        return cls(**d)


@dataclass
class LossBreakdown:
    epoch: int
    total: float
    bce: float
    kl: float
    lr: float


LOSS_CSV_FIELDS = ("epoch", "bce", "kl", "total", "lr")


def write_loss_csv(path: str | os.PathLike, curve: list[LossBreakdown]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOSS_CSV_FIELDS)
        for r in curve:
            w.writerow([r.epoch, repr(r.bce), repr(r.kl), repr(r.total), repr(r.lr)])


def _images(data) -> np.ndarray:
    arr = data.images if isinstance(data, Dataset) else np.asarray(data)
    return arr.astype(np.float32, copy=False)


def _has_bn(model: Autoencoder) -> bool:
    return any(isinstance(layer, BatchNorm) for layer in model.layers())


def batches(n: int, batch_size: int, order: np.ndarray, min_batch: int = 1) -> list[np.ndarray]:
    """Consecutive slices of ``order``; a trailing batch under ``min_batch`` joins the previous one."""
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < min_batch:
        tail = out.pop()
        out[-1] = np.concatenate([out[-1], tail])
    return out


def batch_loss(model: Autoencoder, x: np.ndarray, beta: float, rng: Rng | None,
               kl_reduction: str = "sum") -> tuple[Tensor, float, float]:
    """Forward pass in training mode; returns (total, bce, kl)."""
    out = model.forward(Tensor(x), training=True, rng=rng)
    if isinstance(out, tuple):
        recon, mu, log_var = out
        bce = bce_loss(recon, x)
        kl = kl_term(VaeHead(mu, log_var))
        if kl_reduction == "mean":
            kl = kl * (1.0 / mu.shape[1])
        total = bce + kl * beta
        return total, float(bce.data), float(kl.data)
    bce = bce_loss(out, x)
    return bce, float(bce.data), 0.0


def train(model: Autoencoder, data, cfg: TrainConfig, rng: Rng | None = None,
          schedule: Callable[[int], float] = lr_at_epoch,
          on_epoch: Callable[[LossBreakdown], None] | None = None) -> tuple[Autoencoder, list[LossBreakdown]]:
    """Adam training on BCE (plus beta * KL for VAEs) with per-epoch shuffling.

    Returns the model (updated in place) and the per-epoch sample-weighted
    mean losses. The optimizer state is kept on ``model.adam``.
    """
    x_all = _images(data)
    n = x_all.shape[0]
    rng = rng or Rng(cfg.seed)
    noise = rng.spawn("noise")
    min_batch = 2 if _has_bn(model) else 1
    if n < min_batch and cfg.epochs:
        raise ValueError(f"need at least {min_batch} images to train this model")
    if min_batch == 2 and cfg.batch_size < 2:
        raise ValueError("batch_size must be >= 2 when the model has batch normalisation")
    state: AdamState = getattr(model, "adam", None) or AdamState()
    model.adam = state
    params = model.parameters()
    curve: list[LossBreakdown] = []
    for epoch in range(cfg.epochs):
        lr = schedule(epoch)
        order = rng.spawn("shuffle", epoch).permutation(n)
        sums = np.zeros(3)
        for b, idx in enumerate(batches(n, cfg.batch_size, order, min_batch)):
            x = x_all[idx]
            try:
                total, bce, kl = batch_loss(model, x, cfg.beta, noise, cfg.kl_reduction)
                if not np.isfinite(total.data):
                    raise NumericError("loss is non-finite")
                model.zero_grad()
                total.backward()
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            if params:
                adam_step(params, state, lr)
            sums += len(idx) * np.array([float(total.data), bce, kl])
        model.zero_grad()
        total_m, bce_m, kl_m = sums / max(n, 1)
        rec = LossBreakdown(epoch, float(total_m), float(bce_m), float(kl_m), lr)
        log.info("epoch %d lr %.0e total %.5f bce %.5f kl %.4f", epoch, lr, total_m, bce_m, kl_m)
        curve.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return model, curve


def _chunks(x: np.ndarray, size: int):
    for i in range(0, x.shape[0], size):
        yield x[i:i + size]


def encode_dataset(model: Autoencoder, data, batch_size: int = 256) -> np.ndarray:
    """Deterministic latent codes (the mean for VAEs), row-aligned with ``data``."""
    out = []
    for x in _chunks(_images(data), batch_size):
        code = model.encode(Tensor(x), training=False)
        out.append((code.mu if isinstance(code, VaeHead) else code).data)
    return np.concatenate(out).astype(np.float32)


def decode_latents(model: Autoencoder, z: np.ndarray, batch_size: int = 256) -> np.ndarray:
    z = np.asarray(z, dtype=np.float32)
    return np.concatenate([model.decode(Tensor(c), training=False).data
                           for c in _chunks(z, batch_size)])


def reconstruct(model: Autoencoder, data, mode: str = "mean", rng: Rng | None = None,
                batch_size: int = 256) -> np.ndarray:
    """``decode(encode(x))``; for VAEs ``mode='sample'`` decodes a reparameterised draw."""
    if mode not in ("mean", "sample"):
        raise ValueError("mode must be 'mean' or 'sample'")
    out = []
    for x in _chunks(_images(data), batch_size):
        code = model.encode(Tensor(x), training=False)
        if isinstance(code, VaeHead):
            if mode == "sample":
                if rng is None:
                    raise ValueError("sample mode needs an rng")
                z = reparameterize(code, rng)
            else:
                z = code.mu
        else:
            z = code
        out.append(model.decode(z, training=False).data)
    return np.concatenate(out)
