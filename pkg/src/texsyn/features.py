"""Feature extractors for Gram/style losses and FID statistics.

The desk-scale default is a small convolutional network with fixed,
seed-determined random weights: deterministic, self-contained, and good
enough to separate low-level texture statistics. Its taps reuse the layer
names of the classic VGG-16 style-loss configuration so a pretrained
extractor can be dropped in behind the same interface.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import Tensor, nn

DEFAULT_LAYERS = ("relu1_2", "relu2_2", "relu3_3", "relu4_3")


class RandomConvFeatures(nn.Module):
    """Fixed random-weight extractor with named intermediate taps.

    features(img) returns {layer_name: (B, C_l, H_l, W_l)} and is
    differentiable with respect to the input; the weights never train.
    """

    def __init__(self, seed: int = 1234, widths: tuple[int, ...] = (16, 32, 64, 64)):
        super().__init__()
        rng = torch.Generator().manual_seed(seed)
        chans = (3,) + widths
        self.convs = nn.ModuleList()
        for cin, cout in zip(chans[:-1], chans[1:]):
            conv = nn.Conv2d(cin, cout, 3, padding=1)
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=rng)
                    / math.sqrt(cin * 9)
                )
                conv.bias.zero_()
            self.convs.append(conv)
        self.layer_names = DEFAULT_LAYERS[: len(self.convs)]
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def features(self, img: Tensor, layers: tuple[str, ...] | None = None
                 ) -> dict[str, Tensor]:
        if img.ndim == 3:
            img = img[None]
        wanted = tuple(layers) if layers is not None else self.layer_names
        unknown = set(wanted) - set(self.layer_names)
        if unknown:
            raise ValueError(f"invalid-input: unknown extractor layers {sorted(unknown)}")
        out, x = {}, img
        for name, conv in zip(self.layer_names, self.convs):
            x = F.relu(conv(x))
            if name in wanted:
                out[name] = x
            if name != self.layer_names[-1]:
                x = F.avg_pool2d(x, 2)
        return out

    def embed(self, img: Tensor) -> Tensor:
        """Global feature vector per image (for FID statistics)."""
        feats = self.features(img, layers=(self.layer_names[-1],))
        return feats[self.layer_names[-1]].mean(dim=(2, 3))
