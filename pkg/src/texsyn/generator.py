"""Multi-scale synthesis network.

StyleGAN-2 style generator: a latent mapping MLP produces a style vector w
that modulates every convolution (with weight demodulation); each resolution
has one styled conv + noise injection stage. Texton-broadcasting modules are
element-wise summed into the feature maps: the bottom one replaces the learned
constant input, and in multi-scale mode every resolution up to the cutoff gets
its own module. Output images live in [-1, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from texsyn.texton import TextonBroadcast, sample_axis_translation, sample_phase


def default_channels(base_resolution: int, train_resolution: int) -> dict[int, int]:
    channels = {}
    res = base_resolution
    while res <= train_resolution:
        channels[res] = min(128, 2048 // res)
        res *= 2
    return channels


@dataclass
class GeneratorConfig:
    latent_dim: int = 128
    base_resolution: int = 4
    train_resolution: int = 64
    tb_cutoff_resolution: int | None = None  # default: train_resolution // 4
    channels_per_resolution: dict[int, int] = field(default_factory=dict)
    textons_per_module: int = 16
    tb_mode: str = "multi_scale"  # multi_scale | bottom_only | none
    fixed_phase: bool = False
    per_axis_phase: bool = False
    tb_condition_on_latent: bool = False
    mapping_layers: int = 4
    img_channels: int = 3

    def __post_init__(self):
        if self.tb_cutoff_resolution is None:
            self.tb_cutoff_resolution = max(self.base_resolution, self.train_resolution // 4)
        if not self.channels_per_resolution:
            self.channels_per_resolution = default_channels(
                self.base_resolution, self.train_resolution
            )
        ratio = self.train_resolution / self.base_resolution
        if ratio < 1 or 2 ** int(round(math.log2(ratio))) != ratio:
            raise ValueError(
                "invalid-config: train_resolution must be base_resolution * 2^k"
            )
        if self.tb_cutoff_resolution > self.train_resolution:
            raise ValueError("invalid-config: tb_cutoff_resolution > train_resolution")
        if self.tb_mode not in ("multi_scale", "bottom_only", "none"):
            raise ValueError(f"invalid-config: unknown tb_mode {self.tb_mode!r}")

    @property
    def resolutions(self) -> list[int]:
        out, res = [], self.base_resolution
        while res <= self.train_resolution:
            out.append(res)
            res *= 2
        return out

    @property
    def tb_resolutions(self) -> list[int]:
        if self.tb_mode == "none":
            return []
        if self.tb_mode == "bottom_only":
            return [self.base_resolution]
        return [r for r in self.resolutions if r <= self.tb_cutoff_resolution]


class EqualLinear(nn.Module):
    """Linear layer with runtime weight scaling (equalized learning rate)."""

    def __init__(self, in_dim: int, out_dim: int, bias_init: float = 0.0,
                 rng: torch.Generator | None = None):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(out_dim, in_dim, generator=rng))
        self.bias = nn.Parameter(torch.full((out_dim,), bias_init))
        self.scale = 1.0 / math.sqrt(in_dim)

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight * self.scale, self.bias)


class MappingNetwork(nn.Module):
    def __init__(self, latent_dim: int, num_layers: int, rng: torch.Generator | None = None):
        super().__init__()
        self.layers = nn.ModuleList(
            EqualLinear(latent_dim, latent_dim, rng=rng) for _ in range(num_layers)
        )

    def forward(self, z: Tensor) -> Tensor:
        x = z * torch.rsqrt(torch.mean(z**2, dim=-1, keepdim=True) + 1e-8)
        for layer in self.layers:
            x = F.leaky_relu(layer(x), 0.2) * math.sqrt(2.0)
        return x


class ModulatedConv2d(nn.Module):
    """3x3 (or 1x1) convolution with per-sample style modulation and demodulation."""

    def __init__(self, in_channels: int, out_channels: int, style_dim: int,
                 kernel_size: int = 3, demodulate: bool = True,
                 rng: torch.Generator | None = None):
        super().__init__()
        self.weight = nn.Parameter(
            torch.randn(out_channels, in_channels, kernel_size, kernel_size, generator=rng)
        )
        self.affine = EqualLinear(style_dim, in_channels, bias_init=1.0, rng=rng)
        self.scale = 1.0 / math.sqrt(in_channels * kernel_size**2)
        self.demodulate = demodulate
        self.padding = kernel_size // 2

    def forward(self, x: Tensor, w: Tensor) -> Tensor:
        batch, in_ch, h, wid = x.shape
        style = self.affine(w)  # (batch, in_ch)
        weight = self.scale * self.weight[None] * style[:, None, :, None, None]
        if self.demodulate:
            denom = torch.rsqrt(weight.pow(2).sum(dim=(2, 3, 4)) + 1e-8)
            weight = weight * denom[:, :, None, None, None]
        weight = weight.reshape(-1, in_ch, *self.weight.shape[2:])
        x = x.reshape(1, batch * in_ch, h, wid)
        out = F.conv2d(x, weight, padding=self.padding, groups=batch)
        return out.reshape(batch, -1, *out.shape[2:])


class SynthesisBlock(nn.Module):
    """One styled stage: (optional 2x upsample) -> modulated conv -> noise -> bias/act."""

    def __init__(self, in_channels: int, out_channels: int, style_dim: int,
                 upsample: bool, rng: torch.Generator | None = None):
        super().__init__()
        self.upsample = upsample
        self.conv = ModulatedConv2d(in_channels, out_channels, style_dim, rng=rng)
        self.noise_gain = nn.Parameter(torch.zeros(()))
        self.bias = nn.Parameter(torch.zeros(out_channels))

    def forward(self, x: Tensor, w: Tensor, noise: Tensor, tb: Tensor | None) -> Tensor:
        if self.upsample:
            x = F.interpolate(x, scale_factor=2, mode="nearest")
        x = self.conv(x, w)
        x = x + self.noise_gain * noise
        if tb is not None:
            x = x + tb
        x = x + self.bias[None, :, None, None]
        return F.leaky_relu(x, 0.2) * math.sqrt(2.0)


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig, rng: torch.Generator | None = None):
        super().__init__()
        self.config = config
        ch = config.channels_per_resolution
        self.mapping = MappingNetwork(config.latent_dim, config.mapping_layers, rng=rng)

        self.blocks = nn.ModuleList()
        prev = ch[config.base_resolution]
        for i, res in enumerate(config.resolutions):
            self.blocks.append(
                SynthesisBlock(prev, ch[res], config.latent_dim, upsample=i > 0, rng=rng)
            )
            prev = ch[res]

        tb_res = config.tb_resolutions
        self.tb_modules = nn.ModuleDict()
        for res in tb_res:
            # Bottom module feeds the conv input; others add to conv outputs.
            width = ch[res] if res == config.base_resolution else ch[res]
            self.tb_modules[str(res)] = TextonBroadcast(
                config.textons_per_module, width, rng=rng
            )
        if config.tb_mode == "none":
            self.const_input = nn.Parameter(
                torch.randn(ch[config.base_resolution],
                            config.base_resolution, config.base_resolution, generator=rng)
            )
        if config.tb_condition_on_latent:
            self.tb_cond_heads = nn.ModuleDict(
                {
                    str(res): EqualLinear(
                        config.latent_dim, config.textons_per_module * 5, rng=rng
                    )
                    for res in tb_res
                }
            )

        self.to_rgb = ModulatedConv2d(
            prev, config.img_channels, config.latent_dim,
            kernel_size=1, demodulate=False, rng=rng,
        )
        self.rgb_bias = nn.Parameter(torch.zeros(config.img_channels))

    # -- sampling helpers -------------------------------------------------

    def map_latent(self, z: Tensor) -> Tensor:
        squeeze = z.ndim == 1
        if squeeze:
            z = z[None]
        if z.shape[-1] != self.config.latent_dim:
            raise ValueError(
                f"invalid-latent: expected length {self.config.latent_dim}, got {z.shape[-1]}"
            )
        if not torch.isfinite(z).all():
            raise ValueError("invalid-latent: non-finite entries")
        w = self.mapping(z)
        return w[0] if squeeze else w

    def layer_sizes(self, out_resolution: int | None = None) -> list[int]:
        cfg = self.config
        out_resolution = out_resolution or cfg.train_resolution
        if out_resolution < cfg.train_resolution:
            raise ValueError("invalid-shape: out_resolution below train_resolution")
        scale = out_resolution / cfg.train_resolution
        if 2 ** int(round(math.log2(scale))) != scale:
            raise ValueError(
                "invalid-shape: out_resolution must be train_resolution * 2^k"
            )
        return [int(r * scale) for r in self.config.resolutions]

    def sample_noise(self, rng: torch.Generator, out_resolution: int | None = None,
                     batch: int = 1) -> list[Tensor]:
        """One standard-normal grid per styled stage, shaped for out_resolution."""
        return [
            torch.randn(batch, 1, s, s, generator=rng)
            for s in self.layer_sizes(out_resolution)
        ]

    def sample_phases(self, rng: torch.Generator) -> list[Tensor]:
        """One phase draw per TB site (independent across sites)."""
        cfg = self.config
        if cfg.per_axis_phase:
            return [
                sample_axis_translation(rng, float(cfg.train_resolution))
                for _ in cfg.tb_resolutions
            ]
        return [sample_phase(rng, cfg.fixed_phase) for _ in cfg.tb_resolutions]

    # -- synthesis ---------------------------------------------------------

    def synthesize(self, w: Tensor, noise: list[Tensor], phases: list[Tensor],
                   out_resolution: int | None = None, z: Tensor | None = None) -> Tensor:
        cfg = self.config
        squeeze = w.ndim == 1
        if squeeze:
            w = w[None]
        batch = w.shape[0]
        sizes = self.layer_sizes(out_resolution)
        if len(noise) != len(self.blocks):
            raise ValueError(
                f"invalid-shape: expected {len(self.blocks)} noise grids, got {len(noise)}"
            )
        if len(phases) != len(cfg.tb_resolutions):
            raise ValueError(
                f"invalid-phase: expected {len(cfg.tb_resolutions)} phase samples, "
                f"got {len(phases)}"
            )

        tb_cond = {}
        if cfg.tb_condition_on_latent:
            if z is None:
                raise ValueError("invalid-latent: tb_condition_on_latent requires z")
            zc = z if z.ndim == 2 else z[None]
            for res in cfg.tb_resolutions:
                head = self.tb_cond_heads[str(res)]
                # One parameter set per pass (first latent of the batch).
                tb_cond[res] = head(zc[0]).reshape(cfg.textons_per_module, 5)

        tb_out = {}
        for k, res in enumerate(cfg.tb_resolutions):
            i = cfg.resolutions.index(res)
            module = self.tb_modules[str(res)]
            tb_out[res] = module(phases[k], sizes[i], sizes[i], cond=tb_cond.get(res))

        base = cfg.base_resolution
        if cfg.tb_mode == "none":
            x = self.const_input[None].expand(batch, -1, -1, -1)
            if sizes[0] != base:
                x = F.interpolate(x, size=(sizes[0], sizes[0]), mode="nearest")
        else:
            x = tb_out[base][None].expand(batch, -1, -1, -1)

        for i, (res, block) in enumerate(zip(cfg.resolutions, self.blocks)):
            grid = noise[i]
            if grid.shape[-2:] != (sizes[i], sizes[i]):
                raise ValueError(
                    f"invalid-shape: noise grid {i} is {tuple(grid.shape[-2:])}, "
                    f"expected {(sizes[i], sizes[i])}"
                )
            add = tb_out.get(res) if res != base else None
            x = block(x, w, grid, add[None] if add is not None else None)

        img = torch.tanh(self.to_rgb(x, w) + self.rgb_bias[None, :, None, None])
        return img[0] if squeeze else img

    def generate(self, z: Tensor, noise: list[Tensor], phases: list[Tensor],
                 out_resolution: int | None = None) -> Tensor:
        """Deterministic image for explicit (z, noise, phases)."""
        return self.synthesize(self.map_latent(z), noise, phases,
                               out_resolution=out_resolution, z=z)

    def sample(self, rng: torch.Generator, batch: int = 1,
               out_resolution: int | None = None, z: Tensor | None = None) -> Tensor:
        """Draw (z, noise, phases) from rng and synthesize a batch."""
        if z is None:
            z = torch.randn(batch, self.config.latent_dim, generator=rng)
        noise = self.sample_noise(rng, out_resolution, batch=batch)
        phases = self.sample_phases(rng)
        return self.generate(z, noise, phases, out_resolution=out_resolution)
