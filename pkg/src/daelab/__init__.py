"""Autoencoders with ex-post latent density estimation, on a small numpy autodiff engine."""

from .estimators import AutoencoderEstimator

__version__ = "0.1.0"

__all__ = ["AutoencoderEstimator", "__version__"]
