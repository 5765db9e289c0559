"""Frechet distance between Gaussian fits of image features.

``frechet_distance`` evaluates the trace of the product root through the
symmetric matrix ``Sa^1/2 Sb Sa^1/2``, which is PSD, so only its eigenvalues
are needed. Square roots come from the cyclic Jacobi solver up to
``JACOBI_MAX_DIM`` and from LAPACK above it (pixel features are 3072-wide).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.random_projection import GaussianRandomProjection
from sklearn.utils.validation import check_array

from .io.container import read_tensor
from .io.datasets import Dataset
from .linalg import jacobi_eigh

JACOBI_MAX_DIM = 128
SYM_TOL = 1e-6
NEG_EIG_TOL = 1e-8


class FrechetError(ValueError):
    """Bad statistics or a matrix that is not symmetric PSD."""


@dataclass
class FrechetStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int
    _sqrt: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.cov = np.asarray(self.cov, dtype=np.float64)
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise FrechetError(f"covariance shape {self.cov.shape} does not match mean size {d}")

    @property
    def dim(self) -> int:
        return self.mean.size

    def sqrt_cov(self) -> np.ndarray:
        """Cached PSD square root of ``cov``."""
        if self._sqrt is None:
            self._sqrt = matrix_sqrt_psd(self.cov)
        return self._sqrt


def compute_stats(features) -> FrechetStats:
    """Mean and unbiased covariance of an N x d feature matrix."""
    x = check_array(features, dtype=np.float64)
    if x.shape[0] < 2:
        raise FrechetError(f"need at least 2 feature rows, got {x.shape[0]}")
    mean = x.mean(axis=0)
    diff = x - mean
    cov = diff.T @ diff / (x.shape[0] - 1)
    return FrechetStats(mean, 0.5 * (cov + cov.T), x.shape[0])


def _check_symmetric(m: np.ndarray) -> float:
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > SYM_TOL * scale:
        raise FrechetError("matrix is not symmetric")
    return scale


def _eigh(m: np.ndarray, vectors: bool = True):
    if m.shape[0] <= JACOBI_MAX_DIM:
        w, v = jacobi_eigh(m)
        return (w, v) if vectors else w
    return np.linalg.eigh(m) if vectors else np.linalg.eigvalsh(m)


def _clip(w: np.ndarray, scale: float) -> np.ndarray:
    if w.size and w.min() < -NEG_EIG_TOL * scale:
        raise FrechetError(f"matrix has a significantly negative eigenvalue ({w.min():.3e})")
    return np.maximum(w, 0.0)


def matrix_sqrt_psd(m) -> np.ndarray:
    """Symmetric PSD root of a symmetric PSD matrix via its eigendecomposition."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise FrechetError(f"expected a square matrix, got shape {m.shape}")
    scale = _check_symmetric(m)
    m = 0.5 * (m + m.T)
    w, v = _eigh(m)
    root = (v * np.sqrt(_clip(w, scale))) @ v.T
    return 0.5 * (root + root.T)


def trace_sqrt_product(a: FrechetStats, b: FrechetStats) -> float:
    """tr((Sa Sb)^1/2) = tr((Sa^1/2 Sb Sa^1/2)^1/2)."""
    ra = a.sqrt_cov()
    m = ra @ b.cov @ ra
    m = 0.5 * (m + m.T)
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    return float(np.sqrt(_clip(_eigh(m, vectors=False), scale)).sum())


def frechet_distance(a: FrechetStats, b: FrechetStats) -> float:
    if a.dim != b.dim:
        raise FrechetError(f"dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.mean - b.mean
    val = float(diff @ diff) + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * trace_sqrt_product(a, b)
    return max(val, 0.0)


# -- feature extractors ----------------------------------------------------------

def _flat_images(x) -> np.ndarray:
    if isinstance(x, Dataset):
        x = x.images
    x = np.asarray(x)
    if x.ndim < 2:
        raise FrechetError(f"expected a batch of images or feature rows, got shape {x.shape}")
    return x.reshape(x.shape[0], -1).astype(np.float64)


class PixelFeatures(TransformerMixin, BaseEstimator):
    """Raw pixels, flattened to 3 x H x W features."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return _flat_images(X)


class RandomProjectionFeatures(TransformerMixin, BaseEstimator):
    """Fixed seeded Gaussian projection of the flattened pixels."""

    def __init__(self, n_components: int = 256, seed: int = 0):
        self.n_components = n_components
        self.seed = seed

    def fit(self, X, y=None):
        x = _flat_images(X)
        self.projection_ = GaussianRandomProjection(self.n_components, random_state=self.seed).fit(x)
        return self

    def transform(self, X) -> np.ndarray:
        x = _flat_images(X)
        proj = getattr(self, "projection_", None)
        # the matrix depends only on (seed, input width), so fitting lazily is safe
        if proj is None or proj.n_features_in_ != x.shape[1]:
            self.fit(x[:1])
        return self.projection_.transform(x)


class ExternalFeatures(TransformerMixin, BaseEstimator):
    """Embeddings exported elsewhere (one row per image) in a tensor container.

    ``transform`` accepts a container path, or an array that is already N x d.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        if isinstance(X, (str, os.PathLike)):
            X = read_tensor(X)
        x = np.asarray(X, dtype=np.float64)
        if x.ndim != 2:
            raise FrechetError(f"external embeddings must be N x d, got shape {x.shape}")
        return x


FEATURES = {"pixels": PixelFeatures, "projection": RandomProjectionFeatures, "external": ExternalFeatures}


def make_features(name: str, seed: int = 0, **kw):
    if name not in FEATURES:
        raise ValueError(f"unknown feature extractor {name!r}; choose from {sorted(FEATURES)}")
    if name == "projection":
        return RandomProjectionFeatures(seed=seed, **kw)
    return FEATURES[name](**kw)


class ReferenceScorer:
    """Scores many image sets against one reference, reusing its statistics."""

    def __init__(self, reference, fx):
        self.fx = fx
        self.stats = compute_stats(fx.transform(reference))

    def score(self, generated) -> float:
        if isinstance(generated, (str, os.PathLike)) or len(generated) > 0:
            stats = compute_stats(self.fx.transform(generated))
            # the reference root is the cached one
            return frechet_distance(self.stats, stats)
        raise FrechetError("generated set is empty")


def fid_pipeline(generated, reference, fx=None) -> float:
    """Extract features with one extractor on both sides and compare their Gaussians."""
    fx = fx if fx is not None else PixelFeatures()
    return ReferenceScorer(reference, fx).score(generated)
