"""Convolutional critic (Wasserstein discriminator) with gradient penalty.

Mirrors the generator's resolution ladder with strided downsampling, keeps the
minibatch-stddev layer, and optionally perturbs its input with Gaussian noise
(sigma=0.01 by default) which helps against inter-texture mode collapse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from texsyn.generator import EqualLinear, default_channels


@dataclass
class CriticConfig:
    input_resolution: int = 64
    base_resolution: int = 4
    channels_per_resolution: dict[int, int] = field(default_factory=dict)
    input_noise_sigma: float = 0.01
    img_channels: int = 3

    def __post_init__(self):
        if not self.channels_per_resolution:
            self.channels_per_resolution = default_channels(
                self.base_resolution, self.input_resolution
            )
        if self.input_noise_sigma < 0:
            raise ValueError("invalid-config: input_noise_sigma must be >= 0")


class EqualConv2d(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int = 3,
                 stride: int = 1, rng: torch.Generator | None = None):
        super().__init__()
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kernel_size, kernel_size, generator=rng)
        )
        self.bias = nn.Parameter(torch.zeros(out_channels))
        self.scale = 1.0 / math.sqrt(in_channels * kernel_size**2)
        self.stride = stride
        self.padding = kernel_size // 2

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight * self.scale, self.bias,
                        stride=self.stride, padding=self.padding)


def minibatch_stddev(x: Tensor) -> Tensor:
    """Append one channel holding the batch-wide mean feature stddev."""
    std = x.std(dim=0, unbiased=False).mean()
    feat = std.expand(x.shape[0], 1, x.shape[2], x.shape[3])
    return torch.cat([x, feat], dim=1)


class Critic(nn.Module):
    def __init__(self, config: CriticConfig, rng: torch.Generator | None = None):
        super().__init__()
        self.config = config
        ch = config.channels_per_resolution
        res = config.input_resolution

        self.from_rgb = EqualConv2d(config.img_channels, ch[res], kernel_size=1, rng=rng)
        blocks = []
        while res > config.base_resolution:
            blocks.append(EqualConv2d(ch[res], ch[res], rng=rng))
            blocks.append(EqualConv2d(ch[res], ch[res // 2], stride=2, rng=rng))
            res //= 2
        self.blocks = nn.ModuleList(blocks)
        bottom = ch[config.base_resolution]
        self.final_conv = EqualConv2d(bottom + 1, bottom, rng=rng)
        self.fc = EqualLinear(bottom * config.base_resolution**2, bottom, rng=rng)
        self.out = EqualLinear(bottom, 1, rng=rng)

    def forward(self, images: Tensor, rng: torch.Generator | None = None) -> Tensor:
        """Scores, one real per image. Input noise is added only when rng is given."""
        squeeze = images.ndim == 3
        if squeeze:
            images = images[None]
        r = self.config.input_resolution
        if images.shape[-3:] != (self.config.img_channels, r, r):
            raise ValueError(
                f"invalid-shape: expected (*, {self.config.img_channels}, {r}, {r}), "
                f"got {tuple(images.shape)}"
            )
        if self.config.input_noise_sigma > 0 and rng is not None:
            images = images + self.config.input_noise_sigma * torch.randn(
                images.shape, generator=rng
            )
        x = F.leaky_relu(self.from_rgb(images), 0.2) * math.sqrt(2.0)
        for block in self.blocks:
            x = F.leaky_relu(block(x), 0.2) * math.sqrt(2.0)
        x = minibatch_stddev(x)
        x = F.leaky_relu(self.final_conv(x), 0.2) * math.sqrt(2.0)
        x = F.leaky_relu(self.fc(x.flatten(1)), 0.2) * math.sqrt(2.0)
        scores = self.out(x).squeeze(-1)
        return scores[0] if squeeze else scores


def gradient_penalty(critic: nn.Module, real: Tensor, fake: Tensor,
                     rng: torch.Generator) -> Tensor:
    """WGAN-GP term: E[(||grad_xhat D(xhat)||_2 - 1)^2], eps ~ U[0,1] per sample."""
    if real.shape != fake.shape:
        raise ValueError("invalid-batch: real/fake shapes differ")
    if real.shape[0] == 0:
        raise ValueError("invalid-batch: empty batch")
    eps = torch.rand(real.shape[0], 1, 1, 1, generator=rng)
    return _gradient_penalty_at(critic, real, fake, eps)


def _gradient_penalty_at(critic: nn.Module, real: Tensor, fake: Tensor,
                         eps: Tensor) -> Tensor:
    interp = (eps * real + (1.0 - eps) * fake).detach().requires_grad_(True)
    scores = critic(interp)
    grads = torch.autograd.grad(
        outputs=scores, inputs=interp,
        grad_outputs=torch.ones_like(scores), create_graph=True,
        allow_unused=True,
    )[0]
    if grads is None:  # score independent of input, e.g. a constant critic
        grads = torch.zeros_like(interp)
    norms = grads.flatten(1).norm(2, dim=1)
    return ((norms - 1.0) ** 2).mean()
