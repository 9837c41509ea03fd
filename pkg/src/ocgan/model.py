"""The five OCGAN networks: encoder, decoder, latent/visual discriminators, classifier.

All discriminator-style networks return raw logits. Batch normalization
layers can be told to normalize with batch statistics *without* updating
their running averages, which is how a network is held fixed while still
being run in training mode (see :meth:`OCGAN.update_stats_only`).
"""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import ArchitectureError, ConfigMismatchError, ShapeError

NETWORKS = ("encoder", "decoder", "latent_disc", "visual_disc", "classifier")


@dataclass(frozen=True)
class ModelConfig:
    input_side: int = 28
    ae_base_channels: int = 64
    vis_disc_base_channels: int = 12
    classifier_base_channels: int = 64
    leaky_slope: float = 0.2
    latent_disc_widths: Tuple[int, ...] = (128, 64, 32, 16)
    init_seed: int = 0
    init_std: float = 0.02
    bn_momentum: float = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch

    def __post_init__(self):
        object.__setattr__(self, "latent_disc_widths", tuple(int(w) for w in self.latent_disc_widths))
        channels = (self.ae_base_channels, self.vis_disc_base_channels, self.classifier_base_channels)
        if min(channels) < 1:
            raise ArchitectureError("channel counts must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ArchitectureError("leaky_slope must lie in (0, 1)")
        if not self.latent_disc_widths or min(self.latent_disc_widths) < 1:
            raise ArchitectureError("latent_disc_widths must be a nonempty list of positive widths")

    @classmethod
    def tiny(cls, **overrides) -> "ModelConfig":
        """8x8 inputs and 4 base channels; used for finite-difference checks."""
        params = dict(input_side=8, ae_base_channels=4, vis_disc_base_channels=4,
                      classifier_base_channels=4, latent_disc_widths=(8, 4))
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["latent_disc_widths"] = list(self.latent_disc_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass(frozen=True)
class LatentShape:
    channels: int
    side: int

    @property
    def flat_dim(self) -> int:
        return self.channels * self.side * self.side

    @property
    def dims(self) -> Tuple[int, int, int]:
        return (self.channels, self.side, self.side)


def feature_sides(input_side: int) -> list:
    """Spatial sides after each 5x5 / stride 2 / padding 2 convolution."""
    if input_side < 8:
        raise ArchitectureError(f"input_side {input_side} too small for three stride-2 reductions")
    sides = [input_side]
    for _ in range(3):
        sides.append(math.ceil(sides[-1] / 2))
    return sides


def latent_shape(config: ModelConfig) -> LatentShape:
    return LatentShape(4 * config.ae_base_channels, feature_sides(config.input_side)[-1])


class _FreezableStats:
    """Mixin for batch norm: ``update_stats = False`` keeps running averages untouched."""

    update_stats = True

    def forward(self, x):
        if self.training and not self.update_stats:
            self._check_input_dim(x)
            return F.batch_norm(x, None, None, self.weight, self.bias, True, 0.0, self.eps)
        return super().forward(x)


class BatchNorm1d(_FreezableStats, nn.BatchNorm1d):
    pass


class BatchNorm2d(_FreezableStats, nn.BatchNorm2d):
    pass


def _conv(cin, cout):
    return nn.Conv2d(cin, cout, kernel_size=5, stride=2, padding=2)


def _bounded_tanh(x):
    # float tanh rounds to +-1 for large inputs; shrink by one ulp to keep the open box
    return torch.tanh(x) * (1.0 - torch.finfo(x.dtype).eps / 2)


class Encoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        b, m = config.ae_base_channels, config.bn_momentum
        self.slope = config.leaky_slope
        self.conv1, self.bn1 = _conv(1, b), BatchNorm2d(b, momentum=m)
        self.conv2, self.bn2 = _conv(b, 2 * b), BatchNorm2d(2 * b, momentum=m)
        self.conv3, self.bn3 = _conv(2 * b, 4 * b), BatchNorm2d(4 * b, momentum=m)

    def forward(self, x):
        x = F.leaky_relu(self.bn1(self.conv1(x)), self.slope)
        x = F.leaky_relu(self.bn2(self.conv2(x)), self.slope)
        return _bounded_tanh(self.bn3(self.conv3(x)))


class Decoder(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        b, m = config.ae_base_channels, config.bn_momentum
        s = feature_sides(config.input_side)
        # output_padding makes each transposed conv invert the matching ceil(side / 2)
        pad = [s[k] - (2 * s[k + 1] - 1) for k in range(3)]
        self.slope = config.leaky_slope
        self.deconv1 = nn.ConvTranspose2d(4 * b, 2 * b, 5, stride=2, padding=2, output_padding=pad[2])
        self.bn1 = BatchNorm2d(2 * b, momentum=m)
        self.deconv2 = nn.ConvTranspose2d(2 * b, b, 5, stride=2, padding=2, output_padding=pad[1])
        self.bn2 = BatchNorm2d(b, momentum=m)
        self.deconv3 = nn.ConvTranspose2d(b, 1, 5, stride=2, padding=2, output_padding=pad[0])

    def forward(self, z):
        z = F.leaky_relu(self.bn1(self.deconv1(z)), self.slope)
        z = F.leaky_relu(self.bn2(self.deconv2(z)), self.slope)
        return torch.sigmoid(self.deconv3(z))


class ConvCritic(nn.Module):
    """Three stride-2 convolutions with BN + ReLU and a single-logit linear head.

    Shared by the visual discriminator and the classifier, which differ only
    in base width.
    """

    def __init__(self, config: ModelConfig, base: int):
        super().__init__()
        m = config.bn_momentum
        side = feature_sides(config.input_side)[-1]
        self.conv1, self.bn1 = _conv(1, base), BatchNorm2d(base, momentum=m)
        self.conv2, self.bn2 = _conv(base, 2 * base), BatchNorm2d(2 * base, momentum=m)
        self.conv3, self.bn3 = _conv(2 * base, 4 * base), BatchNorm2d(4 * base, momentum=m)
        self.head = nn.Linear(4 * base * side * side, 1)

    def forward(self, x):
        x = F.relu(self.bn1(self.conv1(x)))
        x = F.relu(self.bn2(self.conv2(x)))
        x = F.relu(self.bn3(self.conv3(x)))
        return self.head(x.flatten(1)).squeeze(1)


class LatentDiscriminator(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        widths = [latent_shape(config).flat_dim, *config.latent_disc_widths]
        self.fcs = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))
        self.bns = nn.ModuleList(BatchNorm1d(w, momentum=config.bn_momentum) for w in widths[1:])
        self.head = nn.Linear(widths[-1], 1)

    def forward(self, z):
        z = z.flatten(1)
        for fc, bn in zip(self.fcs, self.bns):
            z = F.relu(bn(fc(z)))
        return self.head(z).squeeze(1)


_FACTORIES = {
    "encoder": lambda c: Encoder(c),
    "decoder": lambda c: Decoder(c),
    "latent_disc": lambda c: LatentDiscriminator(c),
    "visual_disc": lambda c: ConvCritic(c, c.vis_disc_base_channels),
    "classifier": lambda c: ConvCritic(c, c.classifier_base_channels),
}


def _init_weights(net: nn.Module, seed: int, std: float):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                module.weight.copy_(torch.randn(module.weight.shape, generator=gen) * std)
                module.bias.zero_()
            elif isinstance(module, (nn.BatchNorm1d, nn.BatchNorm2d)):
                module.reset_parameters()


class OCGAN(nn.Module):
    """Container for whichever of the five networks an experiment needs."""

    def __init__(self, config: ModelConfig, networks: Iterable[str] = NETWORKS):
        super().__init__()
        self.config = config
        self.latent = latent_shape(config)
        self.networks = tuple(n for n in NETWORKS if n in set(networks))
        for index, name in enumerate(NETWORKS):
            if name in self.networks:
                net = _FACTORIES[name](config)
                # per-network seed: building a subset never perturbs the others
                _init_weights(net, config.init_seed * 1000003 + index, config.init_std)
                self.add_module(name, net)
            else:
                setattr(self, name, None)

    def has(self, name: str) -> bool:
        return getattr(self, name, None) is not None

    def nets(self, names: Iterable[str]):
        return [getattr(self, n) for n in names if self.has(n)]

    @contextmanager
    def update_stats_only(self, *names: str):
        """Run in training mode; only the named networks move their BN running stats."""
        previous = [(m, m.update_stats) for m in self.modules() if isinstance(m, _FreezableStats)]
        for name in self.networks:
            for m in getattr(self, name).modules():
                if isinstance(m, _FreezableStats):
                    m.update_stats = name in names
        try:
            yield self
        finally:
            for m, flag in previous:
                m.update_stats = flag


def build(config: ModelConfig, networks: Iterable[str] = NETWORKS) -> Tuple[OCGAN, LatentShape]:
    model = OCGAN(config, networks)
    return model, model.latent


# ---------------------------------------------------------------------------
# Parameter store
# ---------------------------------------------------------------------------

def parameter_store(model: OCGAN) -> Dict[str, torch.Tensor]:
    """All weights, biases and BN statistics keyed ``network/layer/param``.

    Batch-count buffers are excluded: momentum is fixed, so they never
    influence the computation.
    """
    store = {}
    for key, tensor in model.state_dict().items():
        if key.endswith("num_batches_tracked"):
            continue
        store[key.replace(".", "/")] = tensor.detach().clone()
    return store


def load_parameter_store(model: OCGAN, store: Dict[str, torch.Tensor]):
    own = parameter_store(model)
    if set(own) != set(store):
        missing, extra = sorted(set(own) - set(store)), sorted(set(store) - set(own))
        raise ConfigMismatchError(f"parameter names differ: missing {missing[:3]}, unexpected {extra[:3]}")
    state = model.state_dict()
    with torch.no_grad():
        for name, value in store.items():
            target = state[name.replace("/", ".")]
            if tuple(target.shape) != tuple(value.shape):
                raise ConfigMismatchError(f"{name}: expected shape {tuple(target.shape)}, got {tuple(value.shape)}")
            target.copy_(torch.as_tensor(value, dtype=target.dtype))


# ---------------------------------------------------------------------------
# Forward passes with shape checks
# ---------------------------------------------------------------------------

def _as_tensor(model: OCGAN, x) -> torch.Tensor:
    dtype = next(model.parameters()).dtype
    if isinstance(x, torch.Tensor):
        return x if x.dtype == dtype else x.to(dtype)
    return torch.as_tensor(np.asarray(x), dtype=dtype)


def _check_images(model: OCGAN, x: torch.Tensor):
    s = model.config.input_side
    if x.dim() != 4 or tuple(x.shape[1:]) != (1, s, s):
        raise ShapeError(f"expected images of shape (N, 1, {s}, {s}), got {tuple(x.shape)}")


def _check_latent(model: OCGAN, z: torch.Tensor):
    if z.dim() != 4 or tuple(z.shape[1:]) != model.latent.dims:
        raise ShapeError(f"expected latents of shape (N, {', '.join(map(str, model.latent.dims))}), got {tuple(z.shape)}")


def encode(model: OCGAN, images) -> torch.Tensor:
    x = _as_tensor(model, images)
    _check_images(model, x)
    return model.encoder(x)


def decode(model: OCGAN, latent) -> torch.Tensor:
    z = _as_tensor(model, latent)
    _check_latent(model, z)
    return model.decoder(z)


def discriminate_latent(model: OCGAN, latent) -> torch.Tensor:
    z = _as_tensor(model, latent)
    _check_latent(model, z)
    return model.latent_disc(z)


def discriminate_visual(model: OCGAN, images) -> torch.Tensor:
    x = _as_tensor(model, images)
    _check_images(model, x)
    return model.visual_disc(x)


def classify(model: OCGAN, images) -> torch.Tensor:
    x = _as_tensor(model, images)
    _check_images(model, x)
    return model.classifier(x)


def sample_uniform_latent(shape: LatentShape, count: int, seed, dtype=np.float32) -> np.ndarray:
    """i.i.d. U(-1, 1) latents, strictly inside the open box.

    ``seed`` is an int or a ``numpy.random.Generator``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(count, *shape.dims)).astype(dtype)
    lo, hi = np.nextafter(dtype(-1), dtype(0)), np.nextafter(dtype(1), dtype(0))
    return np.clip(u, lo, hi)
