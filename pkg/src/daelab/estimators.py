"""scikit-learn style wrapper around the autoencoder plus an ex-post latent density."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff.rng import Rng
from .density import SAMPLERS, fit_density
from .model import ArchConfig, build_autoencoder
from .trainer import TrainConfig, decode_latents, encode_dataset, reconstruct, train


def _images(X) -> np.ndarray:
    x = np.asarray(getattr(X, "images", X), dtype=np.float32)
    if x.ndim != 4:
        raise ValueError(f"expected N x C x H x W images, got shape {x.shape}")
    return x


class AutoencoderEstimator(TransformerMixin, BaseEstimator):
    """Train on images, encode with ``transform``, decode with ``inverse_transform``.

    After ``fit`` the latent density named by ``sampler`` is fitted to the
    training codes, so ``sample(n)`` draws new images.
    """

    def __init__(self, arch: ArchConfig | None = None, epochs: int = 10, batch_size: int = 128,
                 seed: int = 0, sampler: str = "gmm", n_components: int = 10):
        self.arch = arch
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.sampler = sampler
        self.n_components = n_components

    def fit(self, X, y=None):
        if self.sampler not in SAMPLERS:
            raise ValueError(f"sampler must be one of {SAMPLERS}")
        x = _images(X)
        arch = self.arch or ArchConfig("cifar10", filter_base=16, latent_units=32)
        if x.shape[1:] != arch.input_shape:
            raise ValueError(f"images {x.shape[1:]} do not match the architecture {arch.input_shape}")
        rng = Rng(self.seed)
        self.model_ = build_autoencoder(arch, rng.spawn("init"))
        cfg = TrainConfig(epochs=self.epochs, batch_size=self.batch_size, beta=arch.beta, seed=self.seed)
        _, self.loss_curve_ = train(self.model_, x, cfg, rng)
        self.density_ = fit_density(self.sampler, encode_dataset(self.model_, x),
                                    rng.spawn("density"), K=self.n_components)
        self.n_features_in_ = int(np.prod(x.shape[1:]))
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return encode_dataset(self.model_, _images(X))

    def inverse_transform(self, Z) -> np.ndarray:
        check_is_fitted(self, "model_")
        return decode_latents(self.model_, Z)

    def predict(self, X) -> np.ndarray:
        """Reconstructions ``decode(encode(X))``."""
        check_is_fitted(self, "model_")
        return reconstruct(self.model_, _images(X))

    def score(self, X, y=None) -> float:
        """Negative mean binary cross-entropy of the reconstructions (higher is better)."""
        x = _images(X).astype(np.float64)
        r = np.clip(self.predict(x.astype(np.float32)).astype(np.float64), 1e-7, 1 - 1e-7)
        return float((x * np.log(r) + (1 - x) * np.log1p(-r)).mean())

    def sample(self, n: int, rng: Rng | None = None) -> np.ndarray:
        check_is_fitted(self, "density_")
        rng = rng or Rng(self.seed).spawn("sample", self.sampler)
        return self.inverse_transform(self.density_.sample(n, rng).astype(np.float32))
