"""Model checkpoints stored as tensor-container archives."""

from __future__ import annotations

import os

import numpy as np

from ..autodiff.optim import AdamState
from ..autodiff.rng import Rng
from ..autodiff.tensor import ShapeError
from ..model import ArchConfig, Autoencoder, build_autoencoder
from .container import ContainerError, read_archive, write_archive

FORMAT = "daelab-checkpoint"
VERSION = 1


def save_checkpoint(model: Autoencoder, path: str | os.PathLike,
                    adam: AdamState | None = None) -> None:
    if model.cfg is None:
        raise ValueError("only models built from an ArchConfig can be checkpointed")
    adam = adam if adam is not None else getattr(model, "adam", None)
    arrays: dict[str, np.ndarray] = {}
    for name, p in model.named_parameters().items():
        arrays[f"param/{name}"] = p.data
    for name, a in model.state().items():
        arrays[f"state/{name}"] = a
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "arch": model.cfg.to_dict(),
        "trainable": {p.name: bool(p.trainable) for p in model.parameters()},
    }
    if adam is not None:
        meta["adam"] = {"beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps, "step": adam.step}
        for name in adam.m:
            arrays[f"adam.m/{name}"] = adam.m[name]
            arrays[f"adam.v/{name}"] = adam.v[name]
    write_archive(path, arrays, meta)


def load_checkpoint(path: str | os.PathLike, cfg: ArchConfig | None = None) -> Autoencoder:
    """Rebuild a model; ``cfg`` overrides the stored architecture (shapes must agree)."""
    arrays, meta = read_archive(path)
    if meta.get("format") != FORMAT:
        raise ContainerError(f"{path}: not a checkpoint archive")
    if meta.get("version") != VERSION:
        raise ContainerError(f"{path}: checkpoint version {meta.get('version')} != {VERSION}")
    cfg = cfg or ArchConfig.from_dict(meta["arch"])
    model = build_autoencoder(cfg, Rng(0))
    params = model.named_parameters()
    stored = {k[len("param/"):] for k in arrays if k.startswith("param/")}
    if stored != set(params):
        raise ShapeError(f"{path}: parameter set differs from the architecture "
                         f"(missing {sorted(set(params) - stored)[:3]}, extra {sorted(stored - set(params))[:3]})")
    for name, p in params.items():
        a = arrays[f"param/{name}"]
        if a.shape != p.shape:
            raise ShapeError(f"{path}: {name} has shape {a.shape}, architecture expects {p.shape}")
        p.data = a.astype(p.data.dtype)
        p.trainable = bool(meta.get("trainable", {}).get(name, p.trainable))
    model.load_state({k[len("state/"):]: v for k, v in arrays.items() if k.startswith("state/")})
    if "adam" in meta:
        a = meta["adam"]
        adam = AdamState(a["beta1"], a["beta2"], a["eps"], a["step"])
        for k, v in arrays.items():
            if k.startswith("adam.m/"):
                adam.m[k[len("adam.m/"):]] = v
            elif k.startswith("adam.v/"):
                adam.v[k[len("adam.v/"):]] = v
        model.adam = adam
    return model
