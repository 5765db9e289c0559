"""Seedable random streams.

Bits come from numpy's Philox4x64 counter-based generator keyed through a
``SeedSequence`` built from ``(seed, *stream_ids)``, so any named stream can be
re-derived without touching the others. Normal deviates use Box-Muller over
those uniforms rather than numpy's ziggurat so the transform is fully
specified here.
"""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

# fixed ids so stream derivation never depends on hash randomisation
STREAMS = {
    "init": 0,
    "shuffle": 1,
    "noise": 2,
    "density": 3,
    "sample": 4,
    "reference": 5,
    "projection": 6,
    "scatter": 7,
}


def _stream_id(name: int | str) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    if name in STREAMS:
        return STREAMS[name]
    return zlib.crc32(name.encode("utf-8")) + 1024


class Rng:
    """Deterministic random stream identified by ``(seed, *path)``."""

    def __init__(self, seed: int = 0, path: Sequence[int] = ()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, path={self.path})"

    def spawn(self, *names: int | str) -> "Rng":
        """Independent child stream; same names always give the same child."""
        return Rng(self.seed, self.path + tuple(_stream_id(n) for n in names))

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def normal(self, shape=(), dtype=np.float64) -> np.ndarray:
        """Standard normal deviates via Box-Muller."""
        shape = (shape,) if np.isscalar(shape) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64))
        m = (n + 1) // 2
        # 1 - U keeps the log argument in (0, 1]
        u1 = 1.0 - self._gen.random(m)
        u2 = self._gen.random(m)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape).astype(dtype, copy=False)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = np.arange(n)
        if n < 2:
            return idx
        # j_i uniform on [0, i] for i = n-1 .. 1
        js = self._gen.integers(0, np.arange(n - 1, 0, -1) + 1)
        for i, j in zip(range(n - 1, 0, -1), js):
            idx[i], idx[j] = idx[j], idx[i]
        return idx

    def categorical(self, weights: np.ndarray, n: int) -> np.ndarray:
        cdf = np.cumsum(np.asarray(weights, dtype=np.float64))
        cdf /= cdf[-1]
        u = self._gen.random(n)
        return np.minimum(np.searchsorted(cdf, u, side="right"), len(cdf) - 1)

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, in draw order."""
        return self.permutation(n)[:k]
