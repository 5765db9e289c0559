"""Experiment configuration: JSON schema, presets and the experiment grid."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from ..density import SAMPLERS
from ..frechet import FEATURES
from ..model import ArchConfig
from ..trainer import TrainConfig


def _strict(cls, d: dict, where: str) -> dict:
    if not isinstance(d, dict):
        raise ValueError(f"{where} must be a JSON object")
    extra = set(d) - {f.name for f in fields(cls)}
    if extra:
        raise ValueError(f"unknown fields in {where}: {sorted(extra)}")
    return d


@dataclass
class EvalConfig:
    samplers: list[str] = field(default_factory=lambda: list(SAMPLERS))
    n_samples: int = 10_000
    features: str = "pixels"
    feature_dim: int = 256  # random projection width
    reference_split: str = "test"
    reference_size: int | None = None  # None: the whole split
    gmm_components: int = 10
    export_samples: bool = False

    def __post_init__(self):
        self.samplers = list(self.samplers)
        bad = [s for s in self.samplers if s not in SAMPLERS]
        if bad:
            raise ValueError(f"unknown samplers {bad}; choose from {list(SAMPLERS)}")
        if len(set(self.samplers)) != len(self.samplers):
            raise ValueError("samplers must be distinct")
        if self.features not in FEATURES:
            raise ValueError(f"unknown features {self.features!r}; choose from {sorted(FEATURES)}")
        if self.features == "external":
            raise ValueError("external embeddings cannot score freshly generated images; "
                             "export samples and use the fid subcommand instead")
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if self.reference_split not in ("train", "test"):
            raise ValueError("reference_split must be 'train' or 'test'")
        if self.reference_size is not None and self.reference_size < 2:
            raise ValueError("reference_size must be >= 2")


@dataclass
class DataConfig:
    data_dir: str | None = None  # CIFAR-10 binary directory, or an image folder for CelebA
    test_dir: str | None = None  # CelebA only: folder of held-out images
    train_limit: int | None = None
    test_limit: int | None = None


@dataclass
class ExperimentConfig:
    """A single run. ``seed`` and ``arch.beta`` override their copies in ``train``."""

    run_id: str = "run"
    seed: int = 0
    out_dir: str = "runs"
    arch: ArchConfig = field(default_factory=ArchConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self.train = replace(self.train, seed=self.seed, beta=self.arch.beta)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(_strict(cls, d, "experiment config"))
        parts = {"arch": ArchConfig, "train": TrainConfig, "eval": EvalConfig, "data": DataConfig}
        for key, sub in parts.items():
            if key in d:
                d[key] = sub(**_strict(sub, d[key], key))
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return cls.from_dict(json.loads(text))

    def save(self, path: str | os.PathLike) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())

    def with_values(self, **kw) -> "ExperimentConfig":
        """Copy with dotted overrides, e.g. ``{"arch.latent_units": 64}``."""
        d = self.to_dict()
        for key, value in kw.items():
            node = d
            *path, leaf = key.split(".")
            for p in path:
                node = node[p]
            if leaf not in node:
                raise ValueError(f"unknown config field {key!r}")
            node[leaf] = value
        return ExperimentConfig.from_dict(d)


# -- presets ---------------------------------------------------------------------

def desk_preset(**overrides) -> ExperimentConfig:
    """CPU-sized CIFAR run: f=16, 32 latent units, 2048 images, 10 epochs, pixel FID."""
    cfg = ExperimentConfig(
        run_id="desk",
        arch=ArchConfig("cifar10", filter_base=16, latent_units=32, bn_momentum=0.9),
        train=TrainConfig(epochs=10, batch_size=128),
        eval=EvalConfig(n_samples=2048, features="pixels", reference_size=2048),
        data=DataConfig(train_limit=2048),
    )
    return cfg.with_values(**overrides) if overrides else cfg


def grid_configs() -> dict[str, ExperimentConfig]:
    """Full-scale grid: 100 epochs, 10,000 samples per sampler."""
    out: dict[str, ExperimentConfig] = {}

    def add(name, dataset, f, depth=1, kind="DAE", latent=None, **arch):
        latent = latent or (128 if dataset == "cifar10" else 64)
        cfg = ExperimentConfig(run_id=name, arch=ArchConfig(dataset, filter_base=f, depth=depth,
                                                            latent_units=latent, model_kind=kind, **arch))
        out[name] = cfg

    for f in (32, 64, 128):
        for ds in ("cifar10", "celeba"):
            for kind in ("DAE", "VAE"):
                add(f"grid_{ds}_{kind.lower()}_f{f}", ds, f, kind=kind)
    for kind in ("DAE", "VAE"):
        add(f"grid_cifar10_{kind.lower()}_f256", "cifar10", 256, kind=kind)
    for depth in (2, 3):
        add(f"grid_cifar10_dae_f64_d{depth}", "cifar10", 64, depth)
    add("grid_cifar10_dae_f128_d2", "cifar10", 128, 2)
    add("grid_cifar10_dae_f128_d3321", "cifar10", 128, [3, 3, 2, 1])
    for norm in ("BN", "SN", "LN"):
        add(f"grid_cifar10_dae_f128_{norm.lower()}", "cifar10", 128, latent_norm=norm)
    add("grid_cifar10_dae_f128_noise", "cifar10", 128, decoder_noise_sigma=0.5)
    for depth in (1, 2):
        add(f"grid_cifar10_dae_f128_d{depth}_frozen", "cifar10", 128, depth, freeze_latent=True)
    return out


def write_grid(directory: str | os.PathLike) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, cfg in grid_configs().items():
        p = directory / f"{name}.json"
        cfg.save(p)
        paths.append(p)
    return paths
