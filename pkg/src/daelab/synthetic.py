"""Procedural stand-in for CIFAR-10, written in the real binary record layout.

Each image is one of ten "classes": a class palette and a shape (disc, box,
stripes, ring, ...) drawn at a random position and scale over a smooth
background gradient, plus mild low-frequency texture. The point is a
multi-modal, structured image distribution that exercises the full loader and
training path when the real files are not available; it is not a substitute for
CIFAR-10 when absolute scores matter.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .autodiff.rng import Rng
from .io.datasets import CIFAR_TEST_FILES, CIFAR_TRAIN_FILES, resize_bilinear, write_cifar_records

N_CLASSES = 10
SIZE = 32

_PALETTES = np.array([
    # background, foreground (RGB in [0, 1])
    [[0.55, 0.70, 0.90], [0.85, 0.20, 0.15]],
    [[0.20, 0.45, 0.20], [0.95, 0.85, 0.30]],
    [[0.85, 0.80, 0.70], [0.20, 0.20, 0.55]],
    [[0.10, 0.10, 0.15], [0.90, 0.90, 0.95]],
    [[0.70, 0.55, 0.35], [0.30, 0.15, 0.10]],
    [[0.90, 0.90, 0.90], [0.10, 0.50, 0.70]],
    [[0.35, 0.25, 0.45], [0.95, 0.60, 0.20]],
    [[0.60, 0.85, 0.60], [0.45, 0.10, 0.40]],
    [[0.25, 0.35, 0.55], [0.80, 0.80, 0.20]],
    [[0.80, 0.40, 0.40], [0.15, 0.35, 0.15]],
])


def _shape_mask(kind: int, yy, xx, cy, cx, r, theta):
    dy, dx = yy - cy, xx - cx
    c, s = np.cos(theta), np.sin(theta)
    u, v = c * dx + s * dy, -s * dx + c * dy
    if kind in (0, 5):
        return (dx ** 2 + dy ** 2) < r ** 2
    if kind in (1, 6):
        return (np.abs(u) < r) & (np.abs(v) < 0.6 * r)
    if kind in (2, 7):
        return np.sin(u * np.pi / max(r / 2, 1.0)) > 0
    if kind in (3, 8):
        d = np.sqrt(dx ** 2 + dy ** 2)
        return (d < r) & (d > 0.55 * r)
    # triangle-ish wedge
    return (v > -0.5 * r) & (np.abs(u) < (r - v) * 0.6) & (v < r)


def make_images(n: int, rng: Rng) -> tuple[np.ndarray, np.ndarray]:
    """``n`` uint8 images (N x 3 x 32 x 32) and their class labels."""
    labels = rng.integers(0, N_CLASSES, size=n).astype(np.uint8)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE].astype(np.float64)
    out = np.empty((n, 3, SIZE, SIZE), np.uint8)
    params = rng.uniform((n, 8))
    tex = rng.normal((n, 3, 4, 4)) * 0.06
    for i in range(n):
        k = int(labels[i])
        bg, fg = _PALETTES[k]
        p = params[i]
        jitter = (p[6] - 0.5) * 0.25
        gy, gx = (p[4] - 0.5) * 0.5, (p[5] - 0.5) * 0.5
        grad = 1.0 + gy * (yy / SIZE - 0.5) + gx * (xx / SIZE - 0.5)
        img = (bg[:, None, None] + jitter) * grad
        cy, cx = 8 + 16 * p[0], 8 + 16 * p[1]
        r = 5 + 7 * p[2]
        mask = _shape_mask(k, yy, xx, cy, cx, r, np.pi * p[3])
        img = np.where(mask, fg[:, None, None] * (0.85 + 0.3 * p[7]), img)
        # bilinear upsample of a 4 x 4 noise field gives smooth texture
        t = resize_bilinear(tex[i], (SIZE, SIZE))
        img = np.clip(img + t, 0.0, 1.0)
        out[i] = np.round(img * 255).astype(np.uint8)
    return out, labels


def write_synthetic_cifar(path: str | os.PathLike, n_train: int = 10_000, n_test: int = 2_000,
                          seed: int = 0) -> Path:
    """Write data_batch_1..5.bin and test_batch.bin under ``path``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    rng = Rng(seed).spawn("synthetic")
    imgs, labels = make_images(n_train, rng.spawn("train"))
    for f, idx in zip(CIFAR_TRAIN_FILES, np.array_split(np.arange(n_train), len(CIFAR_TRAIN_FILES))):
        write_cifar_records(path / f, imgs[idx], labels[idx])
    imgs, labels = make_images(n_test, rng.spawn("test"))
    write_cifar_records(path / CIFAR_TEST_FILES[0], imgs, labels)
    return path
