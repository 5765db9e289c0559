"""End-to-end runs: train, encode, fit densities, sample, score; plus sweeps."""

from __future__ import annotations

import csv
import json
import logging
import os
import time
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..autodiff.rng import Rng
from ..density import fit_density, save_density
from ..frechet import ReferenceScorer, make_features
from ..io import (Dataset, load_cifar10, load_image_folder, save_checkpoint, write_tensor)
from ..model import build_autoencoder, param_count
from ..trainer import decode_latents, encode_dataset, reconstruct, train, write_loss_csv
from .config import ExperimentConfig

log = logging.getLogger(__name__)

CSV_FIELDS = ("run_id", "dataset", "model_kind", "filter_base", "depth", "latent_units",
              "latent_norm", "sampler", "fid", "train_r_fid", "test_r_fid", "seed")
SWEEP_AXES = ("latent_units", "filter_base", "depth")


@dataclass
class RunRecord:
    run_id: str
    config: dict[str, Any]
    status: str = "running"
    error: str | None = None
    loss_curve: list[dict[str, float]] = field(default_factory=list)
    fid: dict[str, float] = field(default_factory=dict)
    train_r_fid: float | None = None
    test_r_fid: float | None = None
    param_counts: dict[str, int] = field(default_factory=dict)
    seeds: dict[str, Any] = field(default_factory=dict)
    em: dict[str, Any] = field(default_factory=dict)
    n_train: int = 0
    n_reference: int = 0
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def payload(self) -> dict[str, Any]:
        """Everything except wall-clock time, for determinism checks."""
        d = self.to_dict()
        d.pop("wall_clock_s")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        rec = cls(**d)
        # the snapshot must still parse as a config
        ExperimentConfig.from_dict(rec.config)
        return rec

    def csv_rows(self) -> list[dict[str, str]]:
        a = self.config["arch"]
        base = {
            "run_id": self.run_id, "dataset": a["dataset"], "model_kind": a["model_kind"],
            "filter_base": str(a["filter_base"]), "depth": "-".join(str(d) for d in a["depth"]),
            "latent_units": str(a["latent_units"]), "latent_norm": a["latent_norm"],
            "train_r_fid": _fmt(self.train_r_fid), "test_r_fid": _fmt(self.test_r_fid),
            "seed": str(self.config["seed"]),
        }
        samplers = self.config["eval"]["samplers"]
        if not samplers:
            return [{**base, "sampler": "none", "fid": ""}]
        return [{**base, "sampler": s, "fid": _fmt(self.fid.get(s))} for s in samplers]


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_results_csv(path: str | os.PathLike, records: Sequence[RunRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for r in records:
            w.writerows(r.csv_rows())


# -- data ----------------------------------------------------------------------------

def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """Training split and the held-out split named by the config."""
    d = cfg.data
    if d.data_dir is None:
        raise ValueError("no data directory configured (data.data_dir or --data-dir)")
    if cfg.arch.dataset == "cifar10":
        return (load_cifar10(d.data_dir, "train", d.train_limit),
                load_cifar10(d.data_dir, "test", d.test_limit))
    if d.test_dir is None:
        raise ValueError("CelebA runs need data.test_dir for the held-out images")
    return (load_image_folder(d.data_dir, d.train_limit, "train"),
            load_image_folder(d.test_dir, d.test_limit, "test"))


def reference_set(cfg: ExperimentConfig, train_data: Dataset, test_data: Dataset) -> Dataset:
    ref = train_data if cfg.eval.reference_split == "train" else test_data
    k = cfg.eval.reference_size
    if k is None or k >= len(ref):
        return ref
    idx = Rng(cfg.seed).spawn("reference").choice(len(ref), k)
    return ref.subset(np.sort(idx))


# -- single run ----------------------------------------------------------------------

def evaluate(model, cfg: ExperimentConfig, train_data: Dataset, ref: Dataset, rec: RunRecord,
             out: Path | None = None) -> np.ndarray:
    """Encode, fit each sampler, decode, score; fills ``rec`` and returns the latents."""
    rng = Rng(cfg.seed)
    latents = encode_dataset(model, train_data)
    kw = {"n_components": cfg.eval.feature_dim} if cfg.eval.features == "projection" else {}
    scorer = ReferenceScorer(ref, make_features(cfg.eval.features, seed=cfg.seed, **kw))
    n = cfg.eval.n_samples
    if out is not None:
        write_tensor(out / "latents.tnsr", latents)
    for name in cfg.eval.samplers:
        density = fit_density(name, latents, rng.spawn("density"), K=cfg.eval.gmm_components)
        if name == "gmm":
            r = density.report_
            rec.em = {"iterations": r.iterations, "converged": r.converged,
                      "log_likelihood": r.log_likelihood[-1], "reseeded": len(r.reseeded)}
        z = density.sample(n, rng.spawn("sample", name)).astype(np.float32)
        images = decode_latents(model, z)
        rec.fid[name] = scorer.score(images)
        log.info("%s: FID(%s) = %.4f", cfg.run_id, name, rec.fid[name])
        if out is not None:
            save_density(density, out / f"density_{name}.tnsr")
            if cfg.eval.export_samples:
                write_tensor(out / f"samples_{name}.tnsr", images)
    rec.train_r_fid = scorer.score(reconstruct(model, train_data.images[:n]))
    rec.test_r_fid = scorer.score(reconstruct(model, ref))
    return latents


def run_experiment(cfg: ExperimentConfig, train_data: Dataset | None = None,
                   test_data: Dataset | None = None, write: bool = True) -> RunRecord:
    """Train, encode, fit every requested density, sample, score and persist.

    Any failure is caught: the returned record has ``status == "failed"`` and
    keeps whatever was computed before the error.
    """
    t0 = time.perf_counter()
    rec = RunRecord(cfg.run_id, cfg.to_dict())
    rec.seeds = {"run": cfg.seed, "streams": ["init", "shuffle", "noise", "density", "sample", "reference"]}
    out = Path(cfg.out_dir) / cfg.run_id
    try:
        if write:
            out.mkdir(parents=True, exist_ok=True)
            cfg.save(out / "config.json")
        if train_data is None or test_data is None:
            train_data, test_data = load_data(cfg)
        ref = reference_set(cfg, train_data, test_data)
        rec.n_train, rec.n_reference = len(train_data), len(ref)
        rng = Rng(cfg.seed)

        model = build_autoencoder(cfg.arch, rng.spawn("init"))
        rec.param_counts = param_count(model)
        _, curve = train(model, train_data, cfg.train, rng)
        rec.loss_curve = [asdict(c) for c in curve]

        evaluate(model, cfg, train_data, ref, rec, out if write else None)
        if write:
            save_checkpoint(model, out / "checkpoint.ckpt")
            write_loss_csv(out / "loss.csv", curve)
        rec.status = "ok"
    except Exception as exc:  # noqa: BLE001 - a failed run is reported, not raised
        rec.status = "failed"
        rec.error = f"{type(exc).__name__}: {exc}"
        log.error("run %s failed:\n%s", cfg.run_id, traceback.format_exc())
    rec.wall_clock_s = time.perf_counter() - t0
    if write:
        out.mkdir(parents=True, exist_ok=True)
        (out / "record.json").write_text(rec.to_json())
        write_results_csv(out / "results.csv", [rec])
    return rec


# -- sweeps ----------------------------------------------------------------------------

def parse_axis(spec: str) -> tuple[str, list]:
    """``"latent_units=16,32,64"`` or ``"depth=1,2,3-3-2-1"``."""
    if "=" not in spec:
        raise ValueError(f"axis must look like name=v1,v2,... got {spec!r}")
    name, raw = spec.split("=", 1)
    if name not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {name!r}; choose from {SWEEP_AXES}")
    values: list = []
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        values.append([int(t) for t in tok.split("-")] if "-" in tok else int(tok))
    if not values:
        raise ValueError("sweep axis has no values")
    return name, values


def _label(v) -> str:
    return "-".join(map(str, v)) if isinstance(v, list) else str(v)


def sweep(base: ExperimentConfig, axis: str, values: Sequence, train_data: Dataset | None = None,
          test_data: Dataset | None = None, write: bool = True) -> list[RunRecord]:
    """One run per axis value with the base seed; failures are recorded and skipped over."""
    if axis not in SWEEP_AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {SWEEP_AXES}")
    if train_data is None or test_data is None:
        train_data, test_data = load_data(base)
    records = []
    for v in values:
        run_id = f"{base.run_id}_{axis}{_label(v)}"
        try:
            cfg = base.with_values(**{f"arch.{axis}": v, "run_id": run_id})
        except ValueError as exc:
            rec = RunRecord(run_id, base.to_dict(), status="failed", error=str(exc))
        else:
            rec = run_experiment(cfg, train_data, test_data, write)
        records.append(rec)
    if write:
        Path(base.out_dir).mkdir(parents=True, exist_ok=True)
        write_results_csv(Path(base.out_dir) / f"{base.run_id}_sweep.csv", records)
    return records
