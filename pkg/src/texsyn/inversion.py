"""Inversion of the generator's style space against a target texture.

Optimizes a single style vector w (never per-layer w+) so that renders of the
frozen generator match the target's Gram statistics; L2 and content losses are
kept as baselines to demonstrate why location-wise objectives fail on
textures. The expectation over (noise, phases, target crop) is approximated by
resampling all three every iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import torch
import torch.nn.functional as F
from torch import Tensor

from texsyn.errors import ConfigError, NumericalError
from texsyn.features import DEFAULT_LAYERS, RandomConvFeatures
from texsyn.generator import Generator
from texsyn.metrics import gram_distance

LOSS_KINDS = ("gram", "l2", "content")


@dataclass
class InversionConfig:
    loss_kind: str = "gram"
    layer_set: tuple[str, ...] = DEFAULT_LAYERS
    content_layer: str = "relu2_2"
    learning_rate: float = 0.001
    iterations: int = 5000
    crops_per_eval: int = 1
    w_init_samples: int = 1000

    def __post_init__(self):
        if self.loss_kind not in LOSS_KINDS:
            raise ConfigError(f"unknown loss_kind {self.loss_kind!r}")
        if self.iterations < 1 or self.learning_rate <= 0:
            raise ConfigError("iterations >= 1 and learning_rate > 0 required")


@dataclass
class InversionResult:
    w_star: Tensor
    loss_trace: list[float]
    final_loss: float
    best_loss: float = field(default=float("inf"))


def content_loss(img_a: Tensor, img_b: Tensor, extractor: RandomConvFeatures,
                 layer: str = "relu2_2") -> Tensor:
    """Location-wise MSE of feature maps at one layer."""
    if img_a.shape != img_b.shape:
        raise ValueError("invalid-shape: image shapes differ")
    fa = extractor.features(img_a, (layer,))[layer]
    fb = extractor.features(img_b, (layer,))[layer]
    return F.mse_loss(fa, fb)


def mean_w(gen: Generator, rng: torch.Generator, num_samples: int = 1000) -> Tensor:
    if num_samples < 1:
        raise ValueError("invalid-count: num_samples must be >= 1")
    z = torch.randn(num_samples, gen.config.latent_dim, generator=rng)
    with torch.no_grad():
        return gen.map_latent(z).mean(dim=0)


def _loss_fn(kind: str, extractor: RandomConvFeatures, layers: tuple[str, ...],
             content_layer: str) -> Callable[[Tensor, Tensor], Tensor]:
    if kind == "gram":
        return lambda a, b: gram_distance(a, b, extractor, layers).mean()
    if kind == "l2":
        return lambda a, b: F.mse_loss(a, b)
    return lambda a, b: content_loss(a, b, extractor, content_layer)


def invert(gen: Generator, target_provider: Callable[[], Tensor],
           config: InversionConfig, rng: torch.Generator,
           extractor: RandomConvFeatures | None = None,
           w_init: Tensor | None = None) -> InversionResult:
    """Minimize the configured loss over w; returns the best-loss w seen.

    target_provider() yields a (3, R, R) target crop; it is called every
    iteration so multi-crop targets approximate the expectation over crops.
    """
    extractor = extractor or RandomConvFeatures()
    loss_fn = _loss_fn(config.loss_kind, extractor, config.layer_set,
                       config.content_layer)
    gen.eval()
    for p in gen.parameters():
        p.requires_grad_(False)

    if w_init is None:
        w_init = mean_w(gen, rng, config.w_init_samples)
    w = w_init.detach().clone().requires_grad_(True)
    opt = torch.optim.Adam([w], lr=config.learning_rate)

    trace: list[float] = []
    best_loss, best_w = float("inf"), w.detach().clone()
    for iteration in range(config.iterations):
        opt.zero_grad(set_to_none=True)
        loss = w.new_zeros(())
        for _ in range(config.crops_per_eval):
            target = target_provider().detach()
            noise = gen.sample_noise(rng)
            phases = gen.sample_phases(rng)
            render = gen.synthesize(w, noise, phases)
            loss = loss + loss_fn(render, target)
        loss = loss / config.crops_per_eval
        value = float(loss.item())
        if not torch.isfinite(loss):
            raise NumericalError(
                f"non-finite {config.loss_kind} loss at iteration {iteration}"
            )
        trace.append(value)
        if value < best_loss:
            best_loss, best_w = value, w.detach().clone()
        loss.backward()
        opt.step()

    return InversionResult(w_star=best_w, loss_trace=trace,
                           final_loss=trace[-1], best_loss=best_loss)


def interpolate_latent(gen: Generator, z_a: Tensor, z_b: Tensor, steps: int,
                       space: str, rng: torch.Generator,
                       out_resolution: int | None = None) -> list[Tensor]:
    """Images along the straight path between two latents in Z or W space."""
    if steps < 2:
        raise ValueError("invalid-input: steps must be >= 2")
    if space not in ("Z", "W"):
        raise ValueError(f"invalid-input: space must be Z or W, got {space!r}")
    fractions = torch.linspace(0.0, 1.0, steps)
    frames = []
    with torch.no_grad():
        if space == "W":
            wa, wb = gen.map_latent(z_a), gen.map_latent(z_b)
        for frac in fractions:
            noise = gen.sample_noise(rng, out_resolution)
            phases = gen.sample_phases(rng)
            if space == "Z":
                z = (1 - frac) * z_a + frac * z_b
                frames.append(gen.generate(z, noise, phases, out_resolution))
            else:
                w = (1 - frac) * wa + frac * wb
                frames.append(gen.synthesize(w, noise, phases, out_resolution))
    return frames
