"""OCGAN training loop: classifier, discriminators, negative mining, generator.

Each phase owns one Adam optimizer per network it updates and touches no
other network's parameters or batch-norm statistics.
"""
from __future__ import annotations

import csv
import enum
import logging
import math
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterator, List, NamedTuple, Optional

import numpy as np
import torch
import torch.nn.functional as F

from .datasets import EvalSplit, NoiseSpec, batches, inject_noise
from .errors import DivergenceError, ShapeError
from .model import OCGAN, ModelConfig, build, parameter_store, sample_uniform_latent

log = logging.getLogger(__name__)

MINING_EPS = 1e-6


class Ablation(str, enum.Enum):
    AE_ONLY = "ae"
    AE_LATENT_DISC = "ae+ld"
    AE_BOTH_DISCS = "ae+ld+vd"
    FULL = "full"


# from the plain autoencoder up to the full model
ABLATION_ORDER = (Ablation.AE_ONLY, Ablation.AE_LATENT_DISC, Ablation.AE_BOTH_DISCS, Ablation.FULL)

ABLATION_LABELS = {
    Ablation.AE_ONLY: "Without any Discriminators",
    Ablation.AE_LATENT_DISC: "With latent Discriminator",
    Ablation.AE_BOTH_DISCS: "With two Discriminators",
    Ablation.FULL: "Two Discriminators + Classifier",
}

_ACTIVE_LOSSES = {
    Ablation.AE_ONLY: frozenset({"l_mse"}),
    Ablation.AE_LATENT_DISC: frozenset({"l_mse", "l_latent"}),
    Ablation.AE_BOTH_DISCS: frozenset({"l_mse", "l_latent", "l_visual"}),
    Ablation.FULL: frozenset({"l_mse", "l_latent", "l_visual", "l_classifier", "mining"}),
}


def ablation_losses(variant) -> frozenset:
    return _ACTIVE_LOSSES[Ablation(variant)]


def ablation_networks(variant) -> tuple:
    active = ablation_losses(variant)
    nets = ["encoder", "decoder"]
    if "l_latent" in active:
        nets.append("latent_disc")
    if "l_visual" in active:
        nets.append("visual_disc")
    if "l_classifier" in active:
        nets.append("classifier")
    return tuple(nets)


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 64
    lambda_mse: float = 10.0
    mining_subiterations: int = 5
    mining_step_size: float = 0.05
    mining_warmup_iterations: int = 1000
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    val_check_every: int = 500
    noise_variance: float = 0.2
    seed: int = 0
    ablation: Ablation = Ablation.FULL

    def __post_init__(self):
        self.ablation = Ablation(self.ablation)
        if not self.lambda_mse > 0:
            raise ValueError("lambda_mse must be positive")
        if self.mining_subiterations < 0:
            raise ValueError("mining_subiterations must be >= 0")
        if min(self.learning_rate, self.mining_step_size, self.noise_variance) <= 0:
            raise ValueError("rates must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 for batch normalization")
        if self.iterations < 0 or self.val_check_every < 1:
            raise ValueError("iterations must be >= 0 and val_check_every >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ablation"] = self.ablation.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainState:
    model: OCGAN
    config: TrainConfig
    optimizers: Dict[str, torch.optim.Optimizer]
    noise_rng: np.random.Generator
    latent_rng: np.random.Generator
    shuffle_rng: np.random.Generator
    iteration: int = 0
    best_val_mse: float = math.inf
    best_iteration: int = 0
    best_parameters: Dict[str, torch.Tensor] = field(default_factory=dict)
    val_history: List[tuple] = field(default_factory=list)  # (iteration, val_mse, best so far)
    loss_log: List[dict] = field(default_factory=list)

    @property
    def ablation(self) -> Ablation:
        return self.config.ablation


class Draw(NamedTuple):
    """The single noise draw and uniform latent draw shared by all phases of an iteration."""

    x: torch.Tensor
    noisy: torch.Tensor
    l2: torch.Tensor


def init_state(model_config: ModelConfig, config: TrainConfig) -> TrainState:
    model, _ = build(model_config, ablation_networks(config.ablation))
    model.train()
    optimizers = {
        name: torch.optim.Adam(getattr(model, name).parameters(), lr=config.learning_rate,
                               betas=(config.beta1, config.beta2))
        for name in model.networks
    }
    streams = np.random.SeedSequence(config.seed).spawn(3)
    return TrainState(
        model=model,
        config=config,
        optimizers=optimizers,
        noise_rng=np.random.default_rng(streams[0]),
        latent_rng=np.random.default_rng(streams[1]),
        shuffle_rng=np.random.default_rng(streams[2]),
    )


def draw_iteration(state: TrainState, x) -> Draw:
    x_np = x.numpy() if isinstance(x, torch.Tensor) else np.asarray(x, dtype=np.float32)
    noisy = inject_noise(x_np, NoiseSpec(variance=state.config.noise_variance), rng=state.noise_rng)
    l2 = sample_uniform_latent(state.model.latent, len(x_np), state.latent_rng)
    dtype = next(state.model.parameters()).dtype
    return Draw(*(torch.as_tensor(a, dtype=dtype) for a in (x_np, noisy, l2)))


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def mse_loss(x: torch.Tensor, recon: torch.Tensor) -> torch.Tensor:
    if tuple(x.shape) != tuple(recon.shape):
        raise ShapeError(f"shape mismatch {tuple(x.shape)} vs {tuple(recon.shape)}")
    return torch.mean((x - recon) ** 2)


def bce_from_logits(logits: torch.Tensor, target: int, reduction: str = "mean") -> torch.Tensor:
    if target not in (0, 1):
        raise ValueError("target must be 0 or 1")
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, float(target)), reduction=reduction)


@contextmanager
def _grad_enabled_for(model: OCGAN, names):
    """Only parameters of ``names`` require grad inside the block."""
    saved = [(p, p.requires_grad) for p in model.parameters()]
    for name in model.networks:
        for p in getattr(model, name).parameters():
            p.requires_grad_(name in names)
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad_(flag)


def _as_draw(state, x, draw):
    return draw if draw is not None else draw_iteration(state, x)


# ---------------------------------------------------------------------------
# Phases
# ---------------------------------------------------------------------------

def classifier_step(state: TrainState, x=None, draw: Optional[Draw] = None) -> dict:
    """Train C on reconstructions (label 1) vs. decoded uniform samples (label 0)."""
    model = state.model
    if not model.has("classifier"):
        raise ValueError("classifier_step needs the full model")
    d = _as_draw(state, x, draw)
    model.train()
    with model.update_stats_only("classifier"):
        with torch.no_grad():
            recon = model.decoder(model.encoder(d.noisy))
            fake = model.decoder(d.l2)
        opt = state.optimizers["classifier"]
        opt.zero_grad(set_to_none=True)
        loss = bce_from_logits(model.classifier(fake), 0) + bce_from_logits(model.classifier(recon), 1)
        loss.backward()
        opt.step()
    return {"l_classifier": loss.item()}


def discriminator_step(state: TrainState, x=None, draw: Optional[Draw] = None) -> dict:
    """Train D_l on (En(x+n) -> 0, uniform -> 1) and D_v on (De(uniform) -> 0, x -> 1).

    Always uses the fresh uniform draw, never mined latents.
    """
    model = state.model
    names = [n for n in ("latent_disc", "visual_disc") if model.has(n)]
    if not names:
        return {}
    d = _as_draw(state, x, draw)
    model.train()
    report = {}
    with model.update_stats_only(*names):
        for name in names:
            state.optimizers[name].zero_grad(set_to_none=True)
        total = 0.0
        if model.has("latent_disc"):
            with torch.no_grad():
                l1 = model.encoder(d.noisy)
            l_latent = bce_from_logits(model.latent_disc(l1), 0) + bce_from_logits(model.latent_disc(d.l2), 1)
            report["l_latent_disc"] = l_latent.item()
            total = total + l_latent
        if model.has("visual_disc"):
            with torch.no_grad():
                fake = model.decoder(d.l2)
            l_visual = bce_from_logits(model.visual_disc(fake), 0) + bce_from_logits(model.visual_disc(d.x), 1)
            report["l_visual_disc"] = l_visual.item()
            total = total + l_visual
        total.backward()
        for name in names:
            state.optimizers[name].step()
    return report


def mine_informative_negatives(
    model: OCGAN,
    l2: torch.Tensor,
    subiterations: int = 5,
    step_size: float = 0.05,
) -> torch.Tensor:
    """Gradient ascent on BCE(C(De(l2)), 1) with respect to the latents.

    Moves each latent toward decodings the classifier rejects, clamping to
    ``[-1 + 1e-6, 1 - 1e-6]`` after every step. Network parameters and batch
    statistics are left untouched; the caller chooses train/eval mode.
    """
    z = l2.detach().clone()
    if subiterations == 0:
        return z
    lo, hi = -1.0 + MINING_EPS, 1.0 - MINING_EPS
    with model.update_stats_only(), _grad_enabled_for(model, ()):
        for _ in range(subiterations):
            z.requires_grad_(True)
            # per-sample loss: each latent climbs its own gradient
            loss = bce_from_logits(model.classifier(model.decoder(z)), 1, reduction="sum")
            (grad,) = torch.autograd.grad(loss, z)
            z = (z.detach() + step_size * grad).clamp_(lo, hi)
    return z.detach()


def generator_step(state: TrainState, x=None, l2_mined: Optional[torch.Tensor] = None,
                   draw: Optional[Draw] = None) -> dict:
    """Update En and De on lambda * MSE plus whichever adversarial terms are active.

    The terms D_l(l2, 0) and D_v(x, 0) of the full min-max objective have no path to En/De; they
    are reported as ``l_gen_constant`` but not optimized.
    """
    model, cfg = state.model, state.config
    d = _as_draw(state, x, draw)
    l2 = d.l2 if l2_mined is None else l2_mined
    model.train()
    report = {}
    with model.update_stats_only("encoder", "decoder"), _grad_enabled_for(model, ("encoder", "decoder")):
        for name in ("encoder", "decoder"):
            state.optimizers[name].zero_grad(set_to_none=True)
        l1 = model.encoder(d.noisy)
        l_mse = mse_loss(d.x, model.decoder(l1))
        total = cfg.lambda_mse * l_mse
        constant = 0.0
        if model.has("latent_disc"):
            total = total + bce_from_logits(model.latent_disc(l1), 1)
        if model.has("visual_disc"):
            # only the reconstruction pass feeds the decoder's running stats, which scoring uses
            with model.update_stats_only("encoder"):
                fake = model.decoder(l2)
            total = total + bce_from_logits(model.visual_disc(fake), 1)
        total.backward()
        for name in ("encoder", "decoder"):
            state.optimizers[name].step()
        with torch.no_grad():
            if model.has("latent_disc"):
                constant += bce_from_logits(model.latent_disc(d.l2), 0).item()
            if model.has("visual_disc"):
                constant += bce_from_logits(model.visual_disc(d.x), 0).item()
    report["l_mse"] = l_mse.item()
    report["l_gen_total"] = total.item()
    report["l_gen_constant"] = constant
    return report


# ---------------------------------------------------------------------------
# Loop
# ---------------------------------------------------------------------------

@torch.no_grad()
def reconstruction_mse(model: OCGAN, images: np.ndarray, chunk: int = 500) -> np.ndarray:
    """Per-image reconstruction MSE in evaluation mode, no noise."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    out = []
    try:
        for start in range(0, len(images), chunk):
            x = torch.as_tensor(images[start:start + chunk], dtype=dtype)
            recon = model.decoder(model.encoder(x))
            out.append(((x - recon) ** 2).flatten(1).mean(1).double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(out) if out else np.zeros(0)


def _check_validation(state: TrainState, val: np.ndarray):
    val_mse = float(reconstruction_mse(state.model, val).mean())
    if val_mse < state.best_val_mse:
        state.best_val_mse = val_mse
        state.best_iteration = state.iteration
        state.best_parameters = parameter_store(state.model)
    state.val_history.append((state.iteration, val_mse, state.best_val_mse))
    return val_mse


def _batch_stream(state: TrainState, images: np.ndarray) -> Iterator[np.ndarray]:
    while True:
        for chunk in batches(images, state.config.batch_size, state.shuffle_rng):
            # batch norm needs more than one example per batch
            if len(chunk) >= 2:
                yield chunk


def train_iteration(state: TrainState, x: np.ndarray) -> dict:
    cfg, model = state.config, state.model
    draw = draw_iteration(state, x)
    report = {}
    if model.has("classifier"):
        report.update(classifier_step(state, draw=draw))
    report.update(discriminator_step(state, draw=draw))
    l2 = draw.l2
    if model.has("classifier") and state.iteration >= cfg.mining_warmup_iterations:
        l2 = mine_informative_negatives(model, l2, cfg.mining_subiterations, cfg.mining_step_size)
    report.update(generator_step(state, l2_mined=l2, draw=draw))
    if not all(math.isfinite(v) for v in report.values()):
        raise DivergenceError(state.iteration)
    return report


def train(split: EvalSplit, model_config: ModelConfig, config: TrainConfig,
          progress_every: int = 0) -> TrainState:
    """Run the training loop and keep the parameters with the lowest validation MSE."""
    if len(split.train) == 0:
        raise ValueError("training split is empty")
    state = init_state(model_config, config)
    _check_validation(state, split.val)
    stream = _batch_stream(state, split.train)
    for _ in range(config.iterations):
        report = train_iteration(state, next(stream))
        state.iteration += 1
        row = {"iteration": state.iteration, **report}
        if state.iteration % config.val_check_every == 0 or state.iteration == config.iterations:
            row["val_mse"] = _check_validation(state, split.val)
        state.loss_log.append(row)
        if progress_every and state.iteration % progress_every == 0:
            log.info("iter %d mse %.5f best_val %.5f", state.iteration, report["l_mse"], state.best_val_mse)
    return state


LOSS_COLUMNS = ("iteration", "l_mse", "l_latent", "l_visual", "l_classifier", "l_gen_total", "val_mse")
_LOG_KEYS = {"l_latent": "l_latent_disc", "l_visual": "l_visual_disc"}


def write_loss_log(rows, path):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(LOSS_COLUMNS)
        for row in rows:
            values = []
            for col in LOSS_COLUMNS:
                v = row.get(_LOG_KEYS.get(col, col))
                values.append("" if v is None else (str(v) if col == "iteration" else repr(float(v))))
            writer.writerow(values)
