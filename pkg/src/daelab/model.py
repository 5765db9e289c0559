"""Convolutional encoder/decoder construction from an architecture config."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Any, Iterable

import numpy as np

from .autodiff.ops import activation, conv2d, conv2d_transpose, dense
from .autodiff.rng import Rng
from .autodiff.tensor import Parameter, Tensor
from .regularization import (BatchNormState, SpectralNormState, VaeHead, batch_norm,
                             gaussian_noise, layer_norm, reparameterize, spectral_normalize)

DATASETS = {
    # name: (channels, image size, kernel size)
    "cifar10": (3, 32, 4),
    "celeba": (3, 64, 5),
}
MODEL_KINDS = ("DAE", "VAE")
LATENT_NORMS = ("none", "BN", "SN", "LN")


@dataclass
class ArchConfig:
    dataset: str = "cifar10"
    filter_base: int = 128
    depth: Any = 1
    latent_units: int = 128
    model_kind: str = "DAE"
    latent_norm: str = "none"
    decoder_noise_sigma: float = 0.0
    freeze_latent: bool = False
    beta: float = 0.01
    internal_bn: bool = True
    bn_momentum: float = 0.99
    conv_spectral_norm: bool = False
    image_size: int | None = None

    def __post_init__(self):
        if isinstance(self.depth, (int, np.integer)):
            self.depth = [int(self.depth)] * 4
        self.depth = [int(d) for d in self.depth]
        self.validate()

    def validate(self) -> None:
        if self.dataset not in DATASETS:
            raise ValueError(f"unsupported dataset {self.dataset!r}; choose from {sorted(DATASETS)}")
        if len(self.depth) != 4 or any(d < 1 for d in self.depth):
            raise ValueError(f"depth must be 4 positive ints, got {self.depth}")
        if self.filter_base < 1:
            raise ValueError("filter_base must be positive")
        if self.latent_units < 1:
            raise ValueError("latent_units must be positive")
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if self.latent_norm not in LATENT_NORMS:
            raise ValueError(f"latent_norm must be one of {LATENT_NORMS}")
        if self.decoder_noise_sigma < 0:
            raise ValueError("decoder_noise_sigma must be >= 0")
        if not 0.0 <= self.bn_momentum < 1.0:
            raise ValueError("bn_momentum must lie in [0, 1)")
        if self.image_size is not None and self.image_size < 1:
            raise ValueError("image_size must be positive")

    @property
    def channels(self) -> int:
        return DATASETS[self.dataset][0]

    @property
    def size(self) -> int:
        return self.image_size or DATASETS[self.dataset][1]

    @property
    def kernel(self) -> int:
        return DATASETS[self.dataset][2]

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.channels, self.size, self.size

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown ArchConfig fields: {sorted(extra)}")
        return cls(**d)


def glorot_uniform(shape: tuple, fan_in: int, fan_out: int, rng: Rng,
                   dtype=np.float32, gain: float = 1.0) -> np.ndarray:
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(shape, -limit, limit).astype(dtype)


# -- layers ------------------------------------------------------------------

class Layer:
    """Callable network stage; ``state`` holds non-parameter arrays."""

    name = ""

    def __call__(self, x: Tensor, training: bool, rng: Rng | None) -> Tensor:
        raise NotImplementedError

    def parameters(self) -> list[Parameter]:
        return []

    def state(self) -> dict[str, np.ndarray]:
        return {}

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class Conv(Layer):
    def __init__(self, name, c_in, c_out, k, stride, rng, spectral=False, dtype=np.float32):
        self.name, self.stride = name, stride
        self.kernel = Parameter(glorot_uniform((c_out, c_in, k, k), c_in * k * k, c_out * k * k, rng, dtype),
                                f"{name}.kernel")
        self.bias = Parameter(np.zeros(c_out, dtype), f"{name}.bias")
        self.sn = SpectralNormState.init(c_out, rng) if spectral else None

    def __call__(self, x, training, rng):
        k = self.kernel if self.sn is None else spectral_normalize(self.kernel, self.sn, training)
        return conv2d(x, k, self.bias, self.stride, "same")

    def parameters(self):
        return [self.kernel, self.bias]

    def state(self):
        return {} if self.sn is None else {f"{self.name}.sn_u": self.sn.u}

    def load_state(self, arrays):
        if self.sn is not None:
            self.sn.u = arrays[f"{self.name}.sn_u"].astype(np.float32)


class ConvTranspose(Layer):
    def __init__(self, name, c_in, c_out, k, stride, rng, dtype=np.float32):
        self.name, self.stride = name, stride
        self.kernel = Parameter(glorot_uniform((c_in, c_out, k, k), c_out * k * k, c_in * k * k, rng, dtype),
                                f"{name}.kernel")
        self.bias = Parameter(np.zeros(c_out, dtype), f"{name}.bias")

    def __call__(self, x, training, rng):
        return conv2d_transpose(x, self.kernel, self.bias, self.stride)

    def parameters(self):
        return [self.kernel, self.bias]


class Dense(Layer):
    def __init__(self, name, n_in, n_out, rng, spectral=False, gain=1.0, dtype=np.float32):
        self.name = name
        self.weight = Parameter(glorot_uniform((n_in, n_out), n_in, n_out, rng, dtype, gain), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out, dtype), f"{name}.bias")
        self.sn = SpectralNormState.init(n_in, rng) if spectral else None

    def __call__(self, x, training, rng):
        w = self.weight if self.sn is None else spectral_normalize(self.weight, self.sn, training)
        return dense(x, w, self.bias)

    def parameters(self):
        return [self.weight, self.bias]

    def state(self):
        return {} if self.sn is None else {f"{self.name}.sn_u": self.sn.u}

    def load_state(self, arrays):
        if self.sn is not None:
            self.sn.u = arrays[f"{self.name}.sn_u"].astype(np.float32)


class BatchNorm(Layer):
    def __init__(self, name, n, momentum=0.99, dtype=np.float32):
        self.name = name
        self.bn = BatchNormState(n, momentum=momentum, dtype=dtype)
        self.bn.gamma.name = f"{name}.gamma"
        self.bn.beta.name = f"{name}.beta"

    def __call__(self, x, training, rng):
        return batch_norm(x, self.bn, training)

    def parameters(self):
        return [self.bn.gamma, self.bn.beta]

    def state(self):
        return {f"{self.name}.running_mean": self.bn.running_mean,
                f"{self.name}.running_var": self.bn.running_var}

    def load_state(self, arrays):
        self.bn.running_mean = arrays[f"{self.name}.running_mean"].copy()
        self.bn.running_var = arrays[f"{self.name}.running_var"].copy()


class LayerNorm(Layer):
    def __init__(self, name, n, dtype=np.float32):
        self.name = name
        self.scale = Parameter(np.ones(n, dtype), f"{name}.scale")
        self.shift = Parameter(np.zeros(n, dtype), f"{name}.shift")

    def __call__(self, x, training, rng):
        return layer_norm(x, self.scale, self.shift)

    def parameters(self):
        return [self.scale, self.shift]


class Activation(Layer):
    def __init__(self, kind):
        self.kind = kind
        self.name = kind

    def __call__(self, x, training, rng):
        return activation(x, self.kind)


class Reshape(Layer):
    def __init__(self, shape):
        self.shape = tuple(shape)
        self.name = "reshape"

    def __call__(self, x, training, rng):
        return x.reshape((x.shape[0],) + self.shape)


class Noise(Layer):
    def __init__(self, sigma):
        self.sigma = float(sigma)
        self.name = "noise"

    def __call__(self, x, training, rng):
        return gaussian_noise(x, self.sigma, rng, training)


def _run(layers: Iterable[Layer], x: Tensor, training: bool, rng: Rng | None) -> Tensor:
    for layer in layers:
        x = layer(x, training, rng)
    return x


# -- builders ----------------------------------------------------------------

def _check_geometry(cfg: ArchConfig) -> None:
    if cfg.size % 8:
        raise ValueError(f"image size {cfg.size} must be divisible by 8 for the decoder mirror")


def encoder_feature_shape(cfg: ArchConfig) -> tuple[int, int, int]:
    s = cfg.size
    for stride in (1, 2, 2, 2):
        s = math.ceil(s / stride)
    return 8 * cfg.filter_base, s, s


def build_encoder(cfg: ArchConfig, rng: Rng) -> list[Layer]:
    """Four conv stages of f, 2f, 4f, 8f filters; the strided conv ends each stage.

    Returns the stack up to (not including) the latent head, ending flattened.
    """
    layers: list[Layer] = []
    c_in = cfg.channels
    for i, (reps, stride) in enumerate(zip(cfg.depth, (1, 2, 2, 2))):
        c_out = cfg.filter_base * 2 ** i
        for r in range(reps):
            name = f"enc.s{i + 1}.c{r + 1}"
            s = stride if r == reps - 1 else 1
            layers.append(Conv(name, c_in, c_out, cfg.kernel, s, rng, cfg.conv_spectral_norm))
            if cfg.internal_bn:
                layers.append(BatchNorm(f"{name}.bn", c_out, cfg.bn_momentum))
            layers.append(Activation("relu"))
            c_in = c_out
    layers.append(Reshape((-1,)))
    return layers


def build_latent_head(cfg: ArchConfig, rng: Rng) -> dict[str, list[Layer]]:
    """Dense map(s) from flattened features to the latent code."""
    c, h, w = encoder_feature_shape(cfg)
    n_in = c * h * w
    sn = cfg.latent_norm == "SN"
    heads: dict[str, list[Layer]] = {}
    if cfg.model_kind == "DAE":
        heads["z"] = [Dense("latent.z", n_in, cfg.latent_units, rng, spectral=sn)]
    else:
        heads["mu"] = [Dense("latent.mu", n_in, cfg.latent_units, rng, spectral=sn)]
        # small weights + zero bias start log_var at ~0
        heads["log_var"] = [Dense("latent.log_var", n_in, cfg.latent_units, rng, spectral=sn, gain=0.01)]
    target = heads["z"] if "z" in heads else heads["mu"]
    if cfg.latent_norm == "BN":
        target.append(BatchNorm("latent.bn", cfg.latent_units, cfg.bn_momentum))
    elif cfg.latent_norm == "LN":
        target.append(LayerNorm("latent.ln", cfg.latent_units))
    if cfg.freeze_latent:
        for stack in heads.values():
            for layer in stack:
                if isinstance(layer, Dense):
                    for p in layer.parameters():
                        p.trainable = False
    return heads


def build_decoder(cfg: ArchConfig, rng: Rng) -> list[Layer]:
    """Dense to an (H/8, W/8, 8f) map, then 4f and 2f transposed-conv stages and a
    final stride-2 transposed conv to image channels with a sigmoid."""
    _check_geometry(cfg)
    f, k = cfg.filter_base, cfg.kernel
    s0 = cfg.size // 8
    layers: list[Layer] = []
    if cfg.decoder_noise_sigma > 0:
        layers.append(Noise(cfg.decoder_noise_sigma))
    layers.append(Dense("dec.fc", cfg.latent_units, 8 * f * s0 * s0, rng))
    layers.append(Reshape((8 * f, s0, s0)))
    if cfg.internal_bn:
        layers.append(BatchNorm("dec.fc.bn", 8 * f, cfg.bn_momentum))
    layers.append(Activation("relu"))
    c_in = 8 * f
    # decoder stages mirror encoder stages 3 (4f) and 2 (2f)
    for i, (mult, reps) in enumerate(((4, cfg.depth[2]), (2, cfg.depth[1]))):
        c_out = mult * f
        for r in range(reps):
            name = f"dec.s{i + 1}.c{r + 1}"
            s = 2 if r == reps - 1 else 1
            layers.append(ConvTranspose(name, c_in, c_out, k, s, rng))
            if cfg.internal_bn:
                layers.append(BatchNorm(f"{name}.bn", c_out, cfg.bn_momentum))
            layers.append(Activation("relu"))
            c_in = c_out
    layers.append(ConvTranspose("dec.out", c_in, cfg.channels, k, 2, rng))
    layers.append(Activation("sigmoid"))
    return layers


class Autoencoder:
    """Encoder stack, latent head and decoder stack with enumerable parameters."""

    def __init__(self, cfg: ArchConfig | None, encoder: list[Layer],
                 heads: dict[str, list[Layer]], decoder: list[Layer]):
        self.cfg = cfg
        self.encoder = encoder
        self.heads = heads
        self.decoder = decoder
        names = [p.name for p in self.parameters()]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")

    @property
    def kind(self) -> str:
        return "VAE" if "mu" in self.heads else "DAE"

    def layers(self) -> list[Layer]:
        out = list(self.encoder)
        for stack in self.heads.values():
            out.extend(stack)
        return out + list(self.decoder)

    def parameters(self) -> list[Parameter]:
        return [p for layer in self.layers() for p in layer.parameters()]

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def state(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.layers():
            out.update(layer.state())
        return out

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        for layer in self.layers():
            layer.load_state(arrays)

    def astype(self, dtype) -> "Autoencoder":
        """Cast parameters and running statistics in place (float64 for checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for layer in self.layers():
            if isinstance(layer, BatchNorm):
                layer.bn.running_mean = layer.bn.running_mean.astype(dtype)
                layer.bn.running_var = layer.bn.running_var.astype(dtype)
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- forward ---------------------------------------------------------
    def features(self, x: Tensor, training: bool = False, rng: Rng | None = None) -> Tensor:
        return _run(self.encoder, x, training, rng)

    def encode(self, x: Tensor, training: bool = False, rng: Rng | None = None):
        """Latent code for DAEs; a ``VaeHead`` for VAEs."""
        h = self.features(x, training, rng)
        if not self.heads:
            return h
        if self.kind == "DAE":
            return _run(self.heads["z"], h, training, rng)
        return VaeHead(_run(self.heads["mu"], h, training, rng),
                       _run(self.heads["log_var"], h, training, rng))

    def decode(self, z: Tensor, training: bool = False, rng: Rng | None = None) -> Tensor:
        return _run(self.decoder, z, training, rng)

    def forward(self, x: Tensor, training: bool = False, rng: Rng | None = None):
        """DAE: reconstruction. VAE: (reconstruction, mu, log_var)."""
        code = self.encode(x, training, rng)
        if isinstance(code, VaeHead):
            z = reparameterize(code, rng) if training else code.mu
            return self.decode(z, training, rng), code.mu, code.log_var
        return self.decode(code, training, rng)

    __call__ = forward


def build_autoencoder(cfg: ArchConfig, rng: Rng) -> Autoencoder:
    _check_geometry(cfg)
    enc = build_encoder(cfg, rng.spawn("encoder"))
    heads = build_latent_head(cfg, rng.spawn("latent"))
    dec = build_decoder(cfg, rng.spawn("decoder"))
    return Autoencoder(cfg, enc, heads, dec)


def _count(layers: Iterable[Layer]) -> int:
    return sum(p.size for layer in layers for p in layer.parameters())


def param_count(model: Autoencoder) -> dict[str, int]:
    """Parameter tally (trainable and frozen) by component.

    ``encoder`` includes the latent head, which is also reported on its own as
    ``latent``; ``total`` is encoder + decoder.
    """
    latent = sum(_count(stack) for stack in model.heads.values())
    encoder = _count(model.encoder) + latent
    decoder = _count(model.decoder)
    conv = sum(p.size for layer in model.layers() if isinstance(layer, (Conv, ConvTranspose))
               for p in layer.parameters())
    return {"encoder": encoder, "latent": latent, "decoder": decoder,
            "conv": conv, "total": encoder + decoder}
