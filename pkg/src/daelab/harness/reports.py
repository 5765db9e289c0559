"""Latent-space diagnostics, scatter export and the parameter-count report."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import asdict, dataclass, field
from itertools import combinations

import numpy as np
from scipy import stats

from ..autodiff.rng import Rng
from ..density import DensityError, fit_gmm, fit_mvg
from ..model import ArchConfig, Autoencoder, param_count

log = logging.getLogger(__name__)

# parameter counts at which the smoothness bound is reached, per dataset
BOUND_WINDOWS = {"cifar10": (1e7, 1e8), "celeba": (1e7, 1e9)}
FULL_TRAIN_SIZE = {"cifar10": 50_000, "celeba": 162_770}


@dataclass
class LatentReport:
    n: int
    dim: int
    mean: list[float]
    std: list[float]
    skew: list[float]
    excess_kurtosis: list[float]
    cov: list[list[float]]
    degenerate: list[int]
    ll_mvg: float
    ll_gmm: float
    gap: float  # GMM minus MVG mean log-likelihood, nats per point; nan if the GMM fit failed

    def to_dict(self) -> dict:
        return asdict(self)


def latent_report(latents, rng: Rng | None = None, n_components: int = 10) -> LatentReport:
    """Per-dimension moments and the GMM-minus-MVG log-likelihood gap."""
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 100:
        raise ValueError(f"latent report needs an N x d array with N >= 100, got {z.shape}")
    std = z.std(axis=0, ddof=1)
    scale = max(float(np.abs(z).max()), 1.0)
    degenerate = np.flatnonzero(std <= 1e-12 * scale)
    live = std > 1e-12 * scale
    skew = np.zeros(z.shape[1])
    kurt = np.zeros(z.shape[1])
    skew[live] = stats.skew(z[:, live], axis=0)
    kurt[live] = stats.kurtosis(z[:, live], axis=0, fisher=True)
    # constant dimensions are flagged and left out of the likelihood comparison
    ll_mvg = ll_gmm = float("nan")
    if live.any():
        zl = z[:, live]
        ll_mvg = fit_mvg(zl).score(zl)
        try:
            gmm, _ = fit_gmm(zl, n_components, rng if rng is not None else Rng(0).spawn("density"))
            ll_gmm = gmm.score(zl)
        except DensityError as exc:
            log.warning("GMM fit failed in latent report: %s", exc)
    cov = np.atleast_2d(np.cov(z, rowvar=False, ddof=1))
    return LatentReport(
        n=z.shape[0], dim=z.shape[1], mean=z.mean(axis=0).tolist(), std=std.tolist(),
        skew=skew.tolist(), excess_kurtosis=kurt.tolist(), cov=cov.tolist(),
        degenerate=degenerate.tolist(), ll_mvg=ll_mvg, ll_gmm=ll_gmm, gap=ll_gmm - ll_mvg,
    )


SCATTER_FIELDS = ("dim_i", "dim_j", "x", "y")


def scatter_pairs(dim: int, k: int, rng: Rng) -> list[tuple[int, int]]:
    """``k`` distinct random dimension pairs (i < j), capped at all pairs."""
    if dim < 2:
        raise ValueError("scatter export needs at least 2 latent dimensions")
    pairs = list(combinations(range(dim), 2))
    pick = rng.choice(len(pairs), min(k, len(pairs)))
    return [pairs[i] for i in pick]


def scatter_export(latents, k: int, rng: Rng, path: str | os.PathLike | None = None) -> list[tuple]:
    """Rows ``(dim_i, dim_j, x, y)`` for every point and each random pair."""
    z = np.asarray(latents)
    rows = []
    for i, j in scatter_pairs(z.shape[1], k, rng):
        rows.extend((i, j, float(x), float(y)) for x, y in zip(z[:, i], z[:, j]))
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(SCATTER_FIELDS)
            w.writerows((i, j, repr(x), repr(y)) for i, j, x, y in rows)
    return rows


@dataclass
class RobustnessReport:
    dataset: str
    n: int
    d: int
    params: dict[str, int]
    window: tuple[float, float]
    position: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _position(count: int, window: tuple[float, float]) -> str:
    lo, hi = window
    return "below" if count < lo else "above" if count > hi else "within"


def robustness_report(cfg: ArchConfig, model: Autoencoder | None = None,
                      n: int | None = None) -> RobustnessReport:
    """Where each component's parameter count sits against the dataset's window.

    ``n`` defaults to the full training set size; pass ``len(dataset)`` for a subset.
    """
    if model is None:
        from ..model import build_autoencoder
        model = build_autoencoder(cfg, Rng(0))
    counts = param_count(model)
    window = BOUND_WINDOWS[cfg.dataset]
    params = {k: counts[k] for k in ("encoder", "decoder", "latent", "total")}
    return RobustnessReport(
        dataset=cfg.dataset, n=int(n if n is not None else FULL_TRAIN_SIZE[cfg.dataset]),
        d=int(np.prod(cfg.input_shape)), params=params, window=window,
        position={k: _position(v, window) for k, v in params.items()},
    )
