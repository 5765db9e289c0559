"""Command-line entry point: ``daelab <subcommand> [options]``.

Every subcommand prints a JSON document (or a single number for ``fid``) on
stdout and writes its artifacts under ``--out-dir``. Usage errors exit with 2,
runtime failures with 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .autodiff.rng import Rng
from .density import SAMPLERS, fit_density, load_density, save_density
from .frechet import FEATURES, fid_pipeline, make_features
from .harness.config import ExperimentConfig, desk_preset
from .harness.experiment import (RunRecord, evaluate, load_data, parse_axis, reference_set,
                                 run_experiment, sweep, write_results_csv)
from .harness.reports import latent_report, robustness_report, scatter_export
from .io import load_checkpoint, read_tensor, save_checkpoint, write_tensor
from .model import build_autoencoder, param_count
from .synthetic import write_synthetic_cifar
from .trainer import encode_dataset, train, write_loss_csv

log = logging.getLogger("daelab")


class CliError(Exception):
    """A runtime failure reported as a one-line message and exit status 1."""


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", help="ExperimentConfig JSON file (default: the desk preset)")
    g.add_argument("--seed", type=int, help="override the config seed")
    g.add_argument("--out-dir", help="override the config output directory")
    g.add_argument("--data-dir", help="override the config data directory")
    g.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="daelab", description="Autoencoder generative-sampling lab.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    add("train", "train a model; write checkpoint, latents and loss curve")
    p = add("eval", "full run: train, then score every sampler (or score an existing --checkpoint)")
    p.add_argument("--checkpoint", help="skip training and evaluate this checkpoint")
    p = add("sweep", "one run per value of an architecture axis")
    p.add_argument("--axis", required=True, help="e.g. latent_units=16,32,64 or depth=1,2,3-3-2-1")
    p = add("fit-density", "fit a latent density to a latents file")
    p.add_argument("--latents", required=True)
    p.add_argument("--kind", choices=SAMPLERS, default="gmm")
    p.add_argument("--components", type=int, default=10)
    p.add_argument("--output", help="density file (default: <out-dir>/density_<kind>.tnsr)")
    p = add("fid", "Frechet distance between two tensor files")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--features", choices=sorted(FEATURES), default="pixels")
    p.add_argument("--feature-dim", type=int, default=256)
    p = add("report", "latent statistics and/or the parameter-count report")
    p.add_argument("--latents", help="latents file for the moment and Gaussianity report")
    p.add_argument("--robustness", action="store_true", help="include the parameter-count report")
    p.add_argument("--n-train", type=int, help="training set size for the robustness report")
    p = add("scatter", "export random latent dimension pairs as CSV")
    p.add_argument("--latents", required=True)
    p.add_argument("--pairs", type=int, default=4)
    p.add_argument("--output", help="CSV path (default: <out-dir>/scatter.csv)")
    p = add("synth-cifar", "write the procedural CIFAR-format surrogate dataset")
    p.add_argument("--n-train", type=int, default=10_000)
    p.add_argument("--n-test", type=int, default=2_000)
    return parser


def _config(args) -> ExperimentConfig:
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        try:
            cfg = ExperimentConfig.load(path)
        except (ValueError, TypeError) as exc:
            raise CliError(f"invalid config {path}: {exc}") from exc
    else:
        cfg = desk_preset()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.out_dir is not None:
        over["out_dir"] = args.out_dir
    if args.data_dir is not None:
        over["data.data_dir"] = args.data_dir
    return cfg.with_values(**over) if over else cfg


def _out_dir(args, cfg: ExperimentConfig | None = None) -> Path:
    d = Path(args.out_dir or (cfg.out_dir if cfg else "."))
    d.mkdir(parents=True, exist_ok=True)
    return d


def _emit(doc) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _finite(doc):
    # strict JSON has no NaN
    if isinstance(doc, float) and not math.isfinite(doc):
        return None
    if isinstance(doc, dict):
        return {k: _finite(v) for k, v in doc.items()}
    if isinstance(doc, list):
        return [_finite(v) for v in doc]
    return doc


# -- subcommands -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    train_data, _ = load_data(cfg)
    out = _out_dir(args, cfg) / cfg.run_id
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    rng = Rng(cfg.seed)
    model = build_autoencoder(cfg.arch, rng.spawn("init"))
    _, curve = train(model, train_data, cfg.train, rng)
    save_checkpoint(model, out / "checkpoint.ckpt")
    write_tensor(out / "latents.tnsr", encode_dataset(model, train_data))
    write_loss_csv(out / "loss.csv", curve)
    _emit({"run_id": cfg.run_id, "out_dir": str(out), "param_counts": param_count(model),
           "loss_curve": [asdict(c) for c in curve]})
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    if not args.checkpoint:
        rec = run_experiment(cfg)
    else:
        t0 = time.perf_counter()
        out = _out_dir(args, cfg) / cfg.run_id
        out.mkdir(parents=True, exist_ok=True)
        rec = RunRecord(cfg.run_id, cfg.to_dict())
        try:
            model = load_checkpoint(args.checkpoint)
            if model.cfg != cfg.arch:
                raise CliError("checkpoint architecture differs from the config's arch section")
            train_data, test_data = load_data(cfg)
            ref = reference_set(cfg, train_data, test_data)
            rec.n_train, rec.n_reference = len(train_data), len(ref)
            rec.param_counts = param_count(model)
            evaluate(model, cfg, train_data, ref, rec, out)
            rec.status = "ok"
        except Exception as exc:  # noqa: BLE001 - recorded, then reported via exit status
            rec.status, rec.error = "failed", f"{type(exc).__name__}: {exc}"
        rec.wall_clock_s = time.perf_counter() - t0
        (out / "record.json").write_text(rec.to_json())
        write_results_csv(out / "results.csv", [rec])
    _emit(_finite(rec.to_dict()))
    return 0 if rec.status == "ok" else 1


def cmd_sweep(args) -> int:
    cfg = _config(args)
    try:
        axis, values = parse_axis(args.axis)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    records = sweep(cfg, axis, values)
    _emit({"csv": str(Path(cfg.out_dir) / f"{cfg.run_id}_sweep.csv"),
           "runs": [{"run_id": r.run_id, "status": r.status, "error": r.error, "fid": r.fid}
                    for r in records]})
    return 0 if all(r.status == "ok" for r in records) else 1


def cmd_fit_density(args) -> int:
    cfg = _config(args)
    z = read_tensor(args.latents)
    model = fit_density(args.kind, z, Rng(cfg.seed).spawn("density"), K=args.components)
    path = Path(args.output) if args.output else _out_dir(args, cfg) / f"density_{args.kind}.tnsr"
    save_density(model, path)
    doc = {"kind": args.kind, "path": str(path), "n": int(z.shape[0]), "dim": int(z.shape[1]),
           "mean_log_likelihood": float(model.score(z))}
    if args.kind == "gmm":
        r = model.report_
        doc["em"] = {"iterations": r.iterations, "converged": r.converged, "reseeded": len(r.reseeded)}
    _emit(doc)
    return 0


def cmd_fid(args) -> int:
    kw = {"n_components": args.feature_dim} if args.features == "projection" else {}
    fx = make_features(args.features, seed=args.seed or 0, **kw)
    if args.features == "external":
        value = fid_pipeline(args.generated, args.reference, fx)
    else:
        value = fid_pipeline(read_tensor(args.generated), read_tensor(args.reference), fx)
    print(repr(float(value)))
    return 0


def cmd_report(args) -> int:
    if not args.latents and not args.robustness:
        raise CliError("report needs --latents and/or --robustness")
    cfg = _config(args)
    doc = {}
    if args.latents:
        doc["latent"] = latent_report(read_tensor(args.latents), Rng(cfg.seed).spawn("density")).to_dict()
    if args.robustness:
        doc["robustness"] = robustness_report(cfg.arch, n=args.n_train).to_dict()
    path = _out_dir(args, cfg) / "report.json"
    doc = _finite(doc)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    _emit(doc)
    return 0


def cmd_scatter(args) -> int:
    cfg = _config(args)
    path = Path(args.output) if args.output else _out_dir(args, cfg) / "scatter.csv"
    rows = scatter_export(read_tensor(args.latents), args.pairs, Rng(cfg.seed).spawn("scatter"), path)
    pairs = sorted({(i, j) for i, j, _, _ in rows})
    _emit({"path": str(path), "rows": len(rows), "pairs": pairs})
    return 0


def cmd_synth_cifar(args) -> int:
    target = args.data_dir or args.out_dir
    if not target:
        raise CliError("synth-cifar needs --data-dir (or --out-dir) as the destination")
    path = write_synthetic_cifar(target, args.n_train, args.n_test, seed=args.seed or 0)
    _emit({"path": str(path), "n_train": args.n_train, "n_test": args.n_test})
    return 0


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "fit-density": cmd_fit_density,
    "fid": cmd_fid, "report": cmd_report, "scatter": cmd_scatter, "synth-cifar": cmd_synth_cifar,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: usage error (2) or --help (0)
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (CliError, OSError, ValueError) as exc:
        print(f"daelab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
