"""Image datasets: CIFAR-10 binary batches and folders of P6 PPM images."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

RECORD_BYTES = 3073
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)

CELEBA_SOURCE = (218, 178)  # rows, cols of the aligned images
CELEBA_CROP = 140
CELEBA_OFFSET = (39, 19)
CELEBA_SIZE = 64


class DatasetError(ValueError):
    """Missing, truncated or malformed dataset files."""


@dataclass
class Dataset:
    images: np.ndarray  # N x C x H x W float32 in [0, 1]
    split: str = "train"
    source: str = ""

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[0] == 0:
            raise DatasetError(f"dataset needs a non-empty N x C x H x W array, got {self.images.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.split, self.source)


def parse_cifar_bytes(raw: bytes, origin: str = "") -> np.ndarray:
    if len(raw) == 0 or len(raw) % RECORD_BYTES:
        raise DatasetError(f"{origin}: size {len(raw)} is not a positive multiple of {RECORD_BYTES}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    # byte 0 is the label, dropped: training is unsupervised
    return (rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255.0))


def load_cifar10(path: str | os.PathLike, split: str = "train", limit: int | None = None) -> Dataset:
    """Load the binary CIFAR-10 release from a directory (or a single batch file)."""
    path = Path(path)
    if path.is_file():
        files = [path]
    else:
        if split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {split!r}")
        names = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
        files = [path / n for n in names]
        missing = [str(f) for f in files if not f.is_file()]
        if missing:
            raise DatasetError(f"missing CIFAR-10 files: {', '.join(missing)}")
    chunks = []
    total = 0
    for f in files:
        chunks.append(parse_cifar_bytes(f.read_bytes(), str(f)))
        total += len(chunks[-1])
        if limit is not None and total >= limit:
            break
    images = np.concatenate(chunks)
    if limit is not None:
        images = images[:limit]
    return Dataset(images, split, f"cifar10:{path}")


def write_cifar_records(path: str | os.PathLike, images_u8: np.ndarray,
                        labels: np.ndarray | None = None) -> None:
    """Write N x 3 x 32 x 32 uint8 images in the CIFAR-10 record layout."""
    images_u8 = np.asarray(images_u8, dtype=np.uint8)
    n = images_u8.shape[0]
    labels = np.zeros(n, np.uint8) if labels is None else np.asarray(labels, np.uint8)
    rec = np.concatenate([labels[:, None], images_u8.reshape(n, -1)], axis=1)
    Path(path).write_bytes(rec.tobytes())


# -- PPM -----------------------------------------------------------------------

def _ppm_tokens(raw: bytes, count: int) -> tuple[list[int], int]:
    tokens: list[int] = []
    i = 2
    while len(tokens) < count:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        j = i
        while j < len(raw) and raw[j:j + 1].isdigit():
            j += 1
        if j == i:
            raise DatasetError("PPM header is malformed")
        tokens.append(int(raw[i:j]))
        i = j
    # exactly one whitespace byte separates header and raster
    return tokens, i + 1


def read_ppm(path: str | os.PathLike) -> np.ndarray:
    """Binary PPM (P6) as a 3 x H x W float32 array in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise DatasetError(f"{path}: not a binary PPM (P6) file")
    (w, h, maxval), start = _ppm_tokens(raw, 3)
    if not 0 < maxval < 256:
        raise DatasetError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    body = raw[start:start + 3 * w * h]
    if len(body) != 3 * w * h:
        raise DatasetError(f"{path}: truncated raster")
    img = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1)
    return img.astype(np.float32) / np.float32(maxval)


def write_ppm(path: str | os.PathLike, image_u8: np.ndarray) -> None:
    """Write a 3 x H x W uint8 image as P6."""
    img = np.asarray(image_u8, dtype=np.uint8)
    _, h, w = img.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.transpose(1, 2, 0).tobytes())


def _resize_axis(x: np.ndarray, out: int, axis: int) -> np.ndarray:
    n = x.shape[axis]
    scale = n / out
    src = np.clip((np.arange(out) + 0.5) * scale - 0.5, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    frac = (src - lo).astype(x.dtype)
    shape = [1] * x.ndim
    shape[axis] = out
    frac = frac.reshape(shape)
    return np.take(x, lo, axis=axis) * (1 - frac) + np.take(x, hi, axis=axis) * frac


def resize_bilinear(image: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Bilinear resize of a C x H x W array with half-pixel centres."""
    return _resize_axis(_resize_axis(image, size[0], 1), size[1], 2)


def preprocess_celeba(image: np.ndarray) -> np.ndarray:
    """Centre-crop an aligned 3 x 218 x 178 CelebA image to 140 x 140, resize to 64 x 64."""
    image = np.asarray(image)
    if image.shape != (3,) + CELEBA_SOURCE:
        raise DatasetError(f"expected a 3 x 218 x 178 image, got {image.shape}")
    r, c = CELEBA_OFFSET
    crop = image[:, r:r + CELEBA_CROP, c:c + CELEBA_CROP]
    return resize_bilinear(crop, (CELEBA_SIZE, CELEBA_SIZE)).astype(np.float32)


def load_image_folder(path: str | os.PathLike, limit: int | None = None,
                      split: str = "train") -> Dataset:
    """Every ``*.ppm`` in a directory, filename-sorted, preprocessed to 3 x 64 x 64."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")
    files = sorted(p for p in path.iterdir() if p.is_file() and not p.name.startswith("."))
    if limit is not None:
        files = files[:limit]
    if not files:
        raise DatasetError(f"{path}: no images found")
    out = np.empty((len(files), 3, CELEBA_SIZE, CELEBA_SIZE), np.float32)
    for i, f in enumerate(files):
        img = read_ppm(f)
        if img.shape[1:] != CELEBA_SOURCE:
            raise DatasetError(f"{f}: size {img.shape[2]}x{img.shape[1]}, expected 178x218")
        out[i] = preprocess_celeba(img)
    return Dataset(out, split, f"folder:{path}")
