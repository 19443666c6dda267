"""Texton broadcasting: trainable textons modulated by random-phase 2D sinusoids.

A module owns P texton vectors v_i of C channels each. For a forward pass at
spatial size HxW, every texton gets a broadcast map

    BM_i(h, w) = A_i * sin(2*pi * sigmoid(f_i) . [h, w] + phi_i + delta) + B_i

on 1-based integer coordinates h in {1..H}, w in {1..W}, and the module output
is Y(c, h, w) = sum_i v_i(c) * BM_i(h, w). The phase offset delta is drawn
uniformly from [0, 2*pi) once per module per forward pass and shared by all P
maps, so resampling it translates the whole sinusoidal field.

1-based coordinates matter: evaluating at a larger (H', W') and cropping the
top-left HxW block reproduces the smaller map exactly, which is what makes
variable-resolution synthesis coherent.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor, nn

TWO_PI = 2.0 * math.pi


def sigmoid_freq(raw_freq: Tensor) -> Tensor:
    """Map raw frequency parameters into (0, 1) per component."""
    if not torch.isfinite(raw_freq).all():
        raise ValueError("invalid-parameter: raw_freq contains non-finite values")
    return torch.sigmoid(raw_freq)


def sample_phase(rng: torch.Generator, fixed_phase: bool = False) -> Tensor:
    """Draw the shared phase offset delta ~ Uniform[0, 2*pi).

    With fixed_phase=True (spatial-anchoring ablation) the offset is always 0
    and the rng stream is not consumed.
    """
    if fixed_phase:
        return torch.zeros(())
    return torch.rand((), generator=rng) * TWO_PI


def sample_axis_translation(rng: torch.Generator, extent: float) -> Tensor:
    """Experimental per-axis variant: a continuous 2D translation in [0, extent)^2.

    A scalar delta only shifts along each sinusoid's own wave direction; a
    translation vector t shifts both axes independently via the per-texton
    offset 2*pi * sigmoid(f_i) . t. Not the published semantics; off by default.
    """
    return torch.rand(2, generator=rng) * extent


def _phase_offset(raw_freq: Tensor, delta: Tensor) -> Tensor:
    """Per-texton scalar phase offset for a scalar delta or a 2D translation."""
    delta = torch.as_tensor(delta, dtype=raw_freq.dtype, device=raw_freq.device)
    if delta.ndim == 0:
        return delta.expand(raw_freq.shape[:-1])
    if delta.shape == (2,):
        return TWO_PI * (sigmoid_freq(raw_freq) @ delta)
    raise ValueError("invalid-phase: delta must be a scalar or a 2-vector")


def compute_broadcast_map(
    raw_freq: Tensor,
    phase: Tensor,
    amplitude: Tensor,
    offset: Tensor,
    delta: Tensor,
    H: int,
    W: int,
) -> Tensor:
    """Evaluate broadcast maps on the 1-based HxW grid.

    Parameters may carry a leading texton dimension: raw_freq (..., 2) and
    phase/amplitude/offset (...,). Returns (..., H, W). Differentiable with
    respect to every parameter.
    """
    if H < 1 or W < 1:
        raise ValueError(f"invalid-shape: H={H}, W={W} must be >= 1")
    freq = sigmoid_freq(raw_freq)
    dtype, device = freq.dtype, freq.device
    h = torch.arange(1, H + 1, dtype=dtype, device=device)
    w = torch.arange(1, W + 1, dtype=dtype, device=device)
    # (..., H, W) argument grid: 2*pi*(f_h*h + f_w*w) + phi + delta
    arg = TWO_PI * (
        freq[..., 0, None, None] * h[:, None] + freq[..., 1, None, None] * w[None, :]
    )
    shift = phase + _phase_offset(raw_freq, delta)
    arg = arg + shift[..., None, None]
    return amplitude[..., None, None] * torch.sin(arg) + offset[..., None, None]


class TextonBroadcast(nn.Module):
    """One texton-broadcasting module with P textons of C channels.

    forward(delta, H, W) is a pure, differentiable function of the parameters
    and the phase sample; it holds no internal randomness.
    """

    def __init__(self, num_textons: int, channels: int, rng: torch.Generator | None = None):
        super().__init__()
        if num_textons < 1 or channels < 1:
            raise ValueError("invalid-bank: num_textons and channels must be >= 1")
        self.num_textons = num_textons
        self.channels = channels

        def _randn(*shape):
            return torch.randn(*shape, generator=rng)

        # Textons at scale 1/sqrt(C) keep the summed output O(1) at init;
        # raw_freq ~ N(0,1) spreads effective frequencies around 0.5.
        self.textons = nn.Parameter(_randn(num_textons, channels) / math.sqrt(channels))
        self.raw_freq = nn.Parameter(_randn(num_textons, 2))
        self.phase = nn.Parameter(torch.rand(num_textons, generator=rng) * TWO_PI)
        self.amplitude = nn.Parameter(torch.ones(num_textons))
        self.offset = nn.Parameter(torch.zeros(num_textons))

    def broadcast_maps(self, delta: Tensor, H: int, W: int, cond: Tensor | None = None) -> Tensor:
        """All P maps as a (P, H, W) tensor.

        cond, when given, is a (P, 5) override of the sine parameters
        (raw_freq_h, raw_freq_w, phase, amplitude, offset) for the
        latent-conditioned ablation.
        """
        if cond is None:
            raw_freq, phase = self.raw_freq, self.phase
            amplitude, offset = self.amplitude, self.offset
        else:
            if cond.shape != (self.num_textons, 5):
                raise ValueError("invalid-bank: conditioned params must be (P, 5)")
            raw_freq, phase = cond[:, 0:2], cond[:, 2]
            amplitude, offset = cond[:, 3], cond[:, 4]
        return compute_broadcast_map(raw_freq, phase, amplitude, offset, delta, H, W)

    def forward(self, delta: Tensor, H: int, W: int, cond: Tensor | None = None) -> Tensor:
        maps = self.broadcast_maps(delta, H, W, cond=cond)  # (P, H, W)
        return torch.einsum("pc,phw->chw", self.textons.to(maps.dtype), maps)
