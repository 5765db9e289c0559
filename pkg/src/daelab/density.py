"""Ex-post latent densities: standard normal, full-covariance Gaussian, Gaussian mixture.

The estimators follow the scikit-learn shape (``fit`` / ``score_samples`` /
``score``) and add ``sample(n, rng)`` driven by :class:`daelab.autodiff.Rng`,
so draws are reproducible per named stream.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .autodiff.rng import Rng
from .io.container import ContainerError, read_archive, write_archive

log = logging.getLogger(__name__)

REG_SCALE = 1e-6
REG_FLOOR = 1e-12  # keeps constant data factorisable
LOG_2PI = math.log(2.0 * math.pi)


class DensityError(ValueError):
    """Too few points, dimension mismatch or a failed factorisation."""


def _check_points(x, min_rows: int = 1) -> np.ndarray:
    x = check_array(x, dtype=np.float64, ensure_min_samples=min_rows)
    return x


def ridge(cov: np.ndarray) -> float:
    """lambda = 1e-6 x mean diagonal, floored for degenerate data."""
    return max(REG_SCALE * float(np.mean(np.diag(cov))), REG_FLOOR)


def _cholesky(cov: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise DensityError("covariance is not positive definite after regularisation") from exc


def gaussian_log_pdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """Per-row log N(x | mean, L L^T) via one triangular solve."""
    y = solve_triangular(chol, (x - mean).T, lower=True, check_finite=False)
    quad = np.einsum("ij,ij->j", y, y)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (x.shape[1] * LOG_2PI + logdet + quad)


def _check_n(n: int) -> int:
    if int(n) <= 0:
        raise DensityError(f"number of samples must be positive, got {n}")
    return int(n)


class StandardNormal(BaseEstimator):
    """N(0, I); ``fit`` only records the dimension."""

    def __init__(self, dim: int | None = None):
        self.dim = dim

    def fit(self, X, y=None):
        X = _check_points(X)
        self.dim_ = X.shape[1]
        return self

    def _dim(self) -> int:
        d = getattr(self, "dim_", None) or self.dim
        if d is None:
            raise DensityError("StandardNormal needs a dimension: pass dim= or call fit")
        return int(d)

    def score_samples(self, X) -> np.ndarray:
        X = _check_points(X)
        if X.shape[1] != self._dim():
            raise DensityError(f"points have dimension {X.shape[1]}, model has {self._dim()}")
        return -0.5 * (X.shape[1] * LOG_2PI + np.einsum("ij,ij->i", X, X))

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).mean())

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        return rng.normal((_check_n(n), self._dim()))


class FullCovGaussian(BaseEstimator):
    """Empirical mean and covariance (``ddof`` denominator) plus lambda I."""

    def __init__(self, ddof: int = 1):
        self.ddof = ddof

    def fit(self, X, y=None):
        X = _check_points(X)
        if X.shape[0] < 2:
            raise DensityError(f"need at least 2 points to fit a Gaussian, got {X.shape[0]}")
        self.mean_ = X.mean(axis=0)
        cov = np.cov(X, rowvar=False, ddof=self.ddof).reshape(X.shape[1], X.shape[1])
        self.reg_ = ridge(cov)
        self.cov_ = cov + self.reg_ * np.eye(X.shape[1])
        self.chol_ = _cholesky(self.cov_)
        return self

    @classmethod
    def from_moments(cls, mean, cov) -> "FullCovGaussian":
        g = cls()
        g.mean_ = np.asarray(mean, dtype=np.float64)
        g.cov_ = np.asarray(cov, dtype=np.float64)
        g.reg_ = 0.0
        g.chol_ = _cholesky(g.cov_)
        return g

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "chol_")
        X = _check_points(X)
        if X.shape[1] != self.mean_.size:
            raise DensityError(f"points have dimension {X.shape[1]}, model has {self.mean_.size}")
        return gaussian_log_pdf(X, self.mean_, self.chol_)

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).mean())

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        check_is_fitted(self, "chol_")
        eps = rng.normal((_check_n(n), self.mean_.size))
        return self.mean_ + eps @ self.chol_.T


@dataclass
class EmReport:
    """Per E-step traces. ``log_likelihood`` is the penalised objective EM ascends;
    ``data_log_likelihood`` is the plain mean log density."""

    iterations: int = 0
    log_likelihood: list[float] = field(default_factory=list)
    data_log_likelihood: list[float] = field(default_factory=list)
    converged: bool = False
    reseeded: list[tuple[int, int]] = field(default_factory=list)  # (iteration, component)

    def is_monotone(self, slack: float = 1e-9) -> bool:
        ll = np.asarray(self.log_likelihood)
        # a re-seed restarts the ascent
        cuts = sorted({it for it, _ in self.reseeded})
        for seg in np.split(ll, [c + 1 for c in cuts if c + 1 < ll.size]):
            if np.any(np.diff(seg) < -slack):
                return False
        return True


class GaussianMixture(BaseEstimator):
    """Full-covariance mixture fit by EM.

    Initial means are chosen k-means++ style from the data with ``rng``; every
    component starts with the global covariance and equal weight.

    Covariances carry a fixed penalty ``-(n lambda / 2) tr(Sigma_k^-1)`` with
    ``lambda = 1e-6 x mean data variance``. Its M-step is
    ``Sigma_k = S_k + (lambda / w_k) I``, so EM ascends the penalised
    likelihood exactly, and K = 1 gives ``S + lambda I``.
    """

    def __init__(self, n_components: int = 10, tol: float = 1e-5, max_iter: int = 200,
                 min_weight: float = 1e-8):
        self.n_components = n_components
        self.tol = tol
        self.max_iter = max_iter
        self.min_weight = min_weight

    # -- EM pieces -------------------------------------------------------
    @staticmethod
    def _kmeanspp(X: np.ndarray, k: int, rng: Rng) -> np.ndarray:
        idx = [int(rng.integers(0, X.shape[0]))]
        d2 = ((X - X[idx[0]]) ** 2).sum(axis=1)
        for _ in range(1, k):
            total = d2.sum()
            # all remaining points coincide with a centre: fall back to uniform
            w = d2 if total > 0 else np.ones_like(d2)
            idx.append(int(rng.categorical(w, 1)[0]))
            d2 = np.minimum(d2, ((X - X[idx[-1]]) ** 2).sum(axis=1))
        return X[idx].copy()

    def _log_weighted(self, X: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights_)
        return np.stack([logw[k] + gaussian_log_pdf(X, self.means_[k], self.chols_[k])
                         for k in range(self.weights_.size)], axis=1)

    def _penalty(self) -> float:
        eye = np.eye(self.means_.shape[1])
        tr = sum(float((solve_triangular(c, eye, lower=True, check_finite=False) ** 2).sum())
                 for c in self.chols_)
        return 0.5 * self.reg_ * tr

    def _m_step(self, X: np.ndarray, resp: np.ndarray) -> np.ndarray:
        nk = resp.sum(axis=0)
        self.weights_ = nk / X.shape[0]
        d = X.shape[1]
        for k in range(nk.size):
            if nk[k] <= 0:
                continue
            mu = resp[:, k] @ X / nk[k]
            diff = X - mu
            cov = (resp[:, k, None] * diff).T @ diff / nk[k]
            self.means_[k] = mu
            self.covs_[k] = 0.5 * (cov + cov.T) + (self.reg_ / self.weights_[k]) * np.eye(d)
            self.chols_[k] = _cholesky(self.covs_[k])
        return nk

    def fit(self, X, y=None, rng: Rng | None = None):
        X = _check_points(X)
        n, d = X.shape
        k = int(self.n_components)
        if k < 1:
            raise DensityError("n_components must be positive")
        if n < k:
            raise DensityError(f"need at least {k} points for {k} components, got {n}")
        rng = rng if rng is not None else Rng(0).spawn("density")
        global_cov = np.cov(X, rowvar=False, ddof=0).reshape(d, d)
        self.reg_ = ridge(global_cov)
        base = global_cov + self.reg_ * np.eye(d)
        self.means_ = self._kmeanspp(X, k, rng)
        self.covs_ = np.repeat(base[None], k, axis=0)
        self.chols_ = np.repeat(_cholesky(base)[None], k, axis=0)
        self.weights_ = np.full(k, 1.0 / k)
        report = EmReport()
        prev = None
        for it in range(int(self.max_iter)):
            lw = self._log_weighted(X)
            norm = logsumexp(lw, axis=1)
            report.data_log_likelihood.append(float(norm.mean()))
            ll = float(norm.mean()) - self._penalty()
            report.log_likelihood.append(ll)
            report.iterations = it + 1
            if prev is not None and abs(ll - prev) <= self.tol * abs(prev):
                report.converged = True
                break
            prev = ll
            resp = np.exp(lw - norm[:, None])
            nk = self._m_step(X, resp)
            weak = np.flatnonzero(nk / n < self.min_weight)
            if weak.size:
                if any(j == c for _, c in report.reseeded for j in weak):
                    raise DensityError(f"mixture component(s) {weak.tolist()} collapsed twice")
                # restart the collapsed component on the worst-explained point
                for j in weak:
                    worst = int(np.argmin(norm))
                    self.means_[j] = X[worst]
                    self.covs_[j] = base
                    self.chols_[j] = _cholesky(base)
                    self.weights_[j] = 1.0 / k
                    report.reseeded.append((it, int(j)))
                self.weights_ /= self.weights_.sum()
                log.warning("re-seeded collapsed GMM components %s", weak.tolist())
                prev = None
        self.report_ = report
        return self

    def score_samples(self, X) -> np.ndarray:
        check_is_fitted(self, "chols_")
        X = _check_points(X)
        if X.shape[1] != self.means_.shape[1]:
            raise DensityError(f"points have dimension {X.shape[1]}, model has {self.means_.shape[1]}")
        return logsumexp(self._log_weighted(X), axis=1)

    def score(self, X, y=None) -> float:
        return float(self.score_samples(X).mean())

    def predict_proba(self, X) -> np.ndarray:
        lw = self._log_weighted(_check_points(X))
        return np.exp(lw - logsumexp(lw, axis=1, keepdims=True))

    def sample(self, n: int, rng: Rng) -> np.ndarray:
        check_is_fitted(self, "chols_")
        n = _check_n(n)
        comp = rng.categorical(self.weights_, n)
        eps = rng.normal((n, self.means_.shape[1]))
        out = np.empty_like(eps)
        for k in range(self.weights_.size):
            sel = comp == k
            out[sel] = self.means_[k] + eps[sel] @ self.chols_[k].T
        return out


DensityModel = StandardNormal | FullCovGaussian | GaussianMixture
SAMPLERS = ("std_normal", "mvg", "gmm")


# -- functional interface ------------------------------------------------------

def fit_mvg(latents, ddof: int = 1) -> FullCovGaussian:
    return FullCovGaussian(ddof=ddof).fit(latents)


def fit_gmm(latents, K: int = 10, rng: Rng | None = None, **kw) -> tuple[GaussianMixture, EmReport]:
    g = GaussianMixture(n_components=K, **kw).fit(latents, rng=rng)
    return g, g.report_


def fit_density(kind: str, latents, rng: Rng | None = None, K: int = 10):
    """Fit one of the named samplers: ``std_normal``, ``mvg`` or ``gmm``."""
    if kind == "std_normal":
        return StandardNormal().fit(latents)
    if kind == "mvg":
        return fit_mvg(latents)
    if kind == "gmm":
        return fit_gmm(latents, K, rng)[0]
    raise ValueError(f"unknown sampler {kind!r}; choose from {SAMPLERS}")


def sample(model, n: int, rng: Rng) -> np.ndarray:
    return model.sample(n, rng)


def log_likelihood(model, points) -> float:
    return model.score(points)


# -- persistence ---------------------------------------------------------------

def save_density(model, path: str | os.PathLike) -> None:
    if isinstance(model, StandardNormal):
        write_archive(path, {}, {"kind": "std_normal", "dim": model._dim()})
    elif isinstance(model, FullCovGaussian):
        check_is_fitted(model, "chol_")
        write_archive(path, {"mean": model.mean_, "cov": model.cov_},
                      {"kind": "mvg", "ddof": model.ddof, "reg": model.reg_})
    elif isinstance(model, GaussianMixture):
        check_is_fitted(model, "chols_")
        write_archive(path, {"weights": model.weights_, "means": model.means_, "covs": model.covs_},
                      {"kind": "gmm", "reg": model.reg_, "n_components": int(model.weights_.size)})
    else:
        raise TypeError(f"cannot persist {type(model).__name__}")


def load_density(path: str | os.PathLike):
    """Restore a saved density. Arrays round-trip through float32."""
    arrays, meta = read_archive(path)
    kind = meta.get("kind")
    if kind == "std_normal":
        return StandardNormal(dim=int(meta["dim"]))
    if kind == "mvg":
        g = FullCovGaussian.from_moments(arrays["mean"].astype(np.float64), arrays["cov"].astype(np.float64))
        g.ddof, g.reg_ = meta.get("ddof", 1), meta.get("reg", 0.0)
        return g
    if kind == "gmm":
        g = GaussianMixture(n_components=int(meta["n_components"]))
        g.weights_ = arrays["weights"].astype(np.float64)
        g.weights_ /= g.weights_.sum()
        g.means_ = arrays["means"].astype(np.float64)
        g.covs_ = arrays["covs"].astype(np.float64)
        g.chols_ = np.stack([_cholesky(c) for c in g.covs_])
        g.reg_ = meta.get("reg", 0.0)
        return g
    raise ContainerError(f"{path}: not a density archive")
