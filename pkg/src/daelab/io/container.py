"""The ``AETNSR01`` tensor container.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then a little-endian float32 row-major payload. A plain tensor header is
``{"dtype": "f32", "shape": [...]}``. Archives of several named arrays store
the concatenated flat payload as shape ``[total]`` and add ``names``,
``shapes`` and a free-form ``meta`` object.
"""

from __future__ import annotations

import json
import os
import struct
from typing import Any

import numpy as np

MAGIC = b"AETNSR01"


class ContainerError(ValueError):
    """Malformed or incompatible container file."""


def _canonical(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _write(path: str | os.PathLike, header: dict, payload: np.ndarray) -> None:
    hb = _canonical(header)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(payload, dtype="<f4").tobytes())


def _read(path: str | os.PathLike) -> tuple[dict, np.ndarray]:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:8] != MAGIC:
        raise ContainerError(f"{path}: not an AETNSR01 container")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"{path}: unreadable header") from exc
    if header.get("dtype") != "f32":
        raise ContainerError(f"{path}: unsupported dtype {header.get('dtype')!r}")
    shape = [int(s) for s in header["shape"]]
    body = raw[12 + hlen:]
    expected = 4 * int(np.prod(shape, dtype=np.int64))
    if len(body) != expected:
        raise ContainerError(f"{path}: payload is {len(body)} bytes, header implies {expected}")
    data = np.frombuffer(body, dtype="<f4").astype(np.float32).reshape(shape)
    return header, data


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    arr = np.asarray(array, dtype=np.float32)
    _write(path, {"dtype": "f32", "shape": list(arr.shape)}, arr)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    header, data = _read(path)
    if "names" in header:
        raise ContainerError(f"{path}: is an archive; use read_archive")
    return data


def write_archive(path: str | os.PathLike, arrays: dict[str, np.ndarray],
                  meta: dict[str, Any] | None = None) -> None:
    names = sorted(arrays)
    flat = [np.asarray(arrays[n], dtype=np.float32).reshape(-1) for n in names]
    payload = np.concatenate(flat) if flat else np.zeros(0, np.float32)
    header = {
        "dtype": "f32",
        "shape": [int(payload.size)],
        "names": names,
        "shapes": [list(np.shape(arrays[n])) for n in names],
        "meta": meta or {},
    }
    _write(path, header, payload)


def read_archive(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    header, data = _read(path)
    if "names" not in header:
        return {"": data}, {}
    out: dict[str, np.ndarray] = {}
    pos = 0
    for name, shape in zip(header["names"], header["shapes"]):
        n = int(np.prod(shape, dtype=np.int64))
        out[name] = data[pos:pos + n].reshape(shape).copy()
        pos += n
    return out, header.get("meta", {})
