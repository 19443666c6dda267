"""Intra-texture collapse metrics (sigma-maps, TIPP), Gram distance, and FID.

The sigma-map of a latent code is the per-pixel standard deviation of the
generated luminance over resampled noise and phase inputs; TIPP_t is the
fraction of pixels whose sigma stays at or below a threshold t (higher TIPP =
worse anchoring). Luminance lives in [0, 1], so thresholds are in normalized
units; the default grid is {0.5, 1, 2, 4, 8}/255.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import Tensor

from texsyn.corpus import CorpusManifest, crops_to_tensor, grid_crops
from texsyn.errors import NumericalError
from texsyn.features import RandomConvFeatures
from texsyn.generator import Generator

DEFAULT_TIPP_THRESHOLDS = (0.5 / 255, 1 / 255, 2 / 255, 4 / 255, 8 / 255)


@dataclass
class StdDevMap:
    sigma: np.ndarray  # (H, W), >= 0
    latent_id: str
    num_samples: int


@dataclass
class TIPPCurve:
    thresholds: list[float]
    values: list[float]


@dataclass
class FeatureStats:
    mean: np.ndarray  # (D,)
    cov: np.ndarray  # (D, D)


def to_luminance(images: Tensor) -> Tensor:
    """(..., 3, H, W) in [-1, 1] -> (..., H, W) luma in [0, 1]."""
    img01 = (images.clamp(-1, 1) + 1.0) / 2.0
    weights = torch.tensor([0.299, 0.587, 0.114], dtype=img01.dtype)
    return torch.einsum("...chw,c->...hw", img01, weights)


def sigma_of_images(images: Tensor) -> np.ndarray:
    """Population per-pixel stddev of luminance over the leading dimension."""
    lum = to_luminance(images).double()
    return lum.std(dim=0, unbiased=False).cpu().numpy()


def stddev_map(gen: Generator, z: Tensor, num_noise_samples: int,
               rng: torch.Generator, out_resolution: int | None = None,
               latent_id: str = "z") -> StdDevMap:
    """Per-pixel sigma over generations at fixed z, resampling noise and phases."""
    if num_noise_samples < 2:
        raise ValueError("invalid-count: num_noise_samples must be >= 2")
    w = gen.map_latent(z)
    outs = []
    with torch.no_grad():
        for _ in range(num_noise_samples):
            noise = gen.sample_noise(rng, out_resolution)
            phases = gen.sample_phases(rng)
            outs.append(gen.synthesize(w, noise, phases, out_resolution, z=z))
    return StdDevMap(sigma=sigma_of_images(torch.stack(outs)),
                     latent_id=latent_id, num_samples=num_noise_samples)


def tipp(sigma_maps: list[StdDevMap], t: float) -> float:
    """Fraction of pixels with sigma <= t per map, averaged over maps."""
    if not sigma_maps:
        raise ValueError("invalid-input: no sigma maps")
    if t < 0:
        raise ValueError("invalid-input: threshold must be >= 0")
    return float(np.mean([(m.sigma <= t).mean() for m in sigma_maps]))


def tipp_curve(sigma_maps: list[StdDevMap],
               thresholds: tuple[float, ...] = DEFAULT_TIPP_THRESHOLDS) -> TIPPCurve:
    ts = sorted(thresholds)
    return TIPPCurve(thresholds=list(ts), values=[tipp(sigma_maps, t) for t in ts])


def model_sigma_maps(gen: Generator, num_latents: int, crops_per_latent: int,
                     seed: int) -> list[StdDevMap]:
    """Sigma maps for a batch of latent codes (model TIPP protocol)."""
    rng = torch.Generator().manual_seed(seed)
    maps = []
    for i in range(num_latents):
        z = torch.randn(gen.config.latent_dim, generator=rng)
        maps.append(stddev_map(gen, z, crops_per_latent, rng, latent_id=f"z{i:04d}"))
    return maps


def dataset_sigma_maps(manifest: CorpusManifest, crops_per_texture: int = 20
                       ) -> list[StdDevMap]:
    """Per-texture sigma over non-overlapping grid crops (dataset TIPP protocol)."""
    import warnings

    maps = []
    for rec in manifest.records:
        crops = grid_crops(rec, manifest.crop_size, max_crops=crops_per_texture)
        if crops.shape[0] < 2:
            warnings.warn(f"texture {rec.id}: fewer than 2 crops, skipped")
            continue
        images = crops_to_tensor(crops)
        maps.append(StdDevMap(sigma=sigma_of_images(images),
                              latent_id=rec.id, num_samples=crops.shape[0]))
    if not maps:
        raise ValueError("invalid-input: no texture yielded >= 2 crops")
    return maps


def tipp_for_dataset(manifest: CorpusManifest, t: float,
                     crops_per_texture: int = 20) -> float:
    return tipp(dataset_sigma_maps(manifest, crops_per_texture), t)


# ---------------------------------------------------------------------------
# Gram / style distance
# ---------------------------------------------------------------------------

def gram_matrix(feat: Tensor) -> Tensor:
    """(C, H, W) or (B, C, H, W) -> (.., C, C) Gram matrix Phi Phi^T."""
    squeeze = feat.ndim == 3
    if squeeze:
        feat = feat[None]
    flat = feat.flatten(2)  # (B, C, N)
    gram = flat @ flat.transpose(1, 2)
    return gram[0] if squeeze else gram


def gram_distance(img_a: Tensor, img_b: Tensor, extractor: RandomConvFeatures,
                  layers: tuple[str, ...] | None = None) -> Tensor:
    """Sum over layers of squared entries of (G_a - G_b) / (C_l * N_l^2)."""
    if img_a.shape != img_b.shape:
        raise ValueError("invalid-shape: image shapes differ")
    fa = extractor.features(img_a, layers)
    fb = extractor.features(img_b, layers)
    total = None
    for name in fa:
        c = fa[name].shape[-3]
        n = fa[name].shape[-2] * fa[name].shape[-1]
        diff = (gram_matrix(fa[name]) - gram_matrix(fb[name])) / (c * n**2)
        term = diff.pow(2).sum(dim=(-2, -1))
        total = term if total is None else total + term
    return total.squeeze()


# ---------------------------------------------------------------------------
# FID
# ---------------------------------------------------------------------------

def feature_stats(images: Tensor, extractor: RandomConvFeatures,
                  batch_size: int = 64) -> FeatureStats:
    embeds = []
    with torch.no_grad():
        for start in range(0, images.shape[0], batch_size):
            embeds.append(extractor.embed(images[start : start + batch_size]))
    feats = torch.cat(embeds).double().cpu().numpy()
    mean = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    return FeatureStats(mean=mean, cov=np.atleast_2d(cov))


def fid(stats_a: FeatureStats, stats_b: FeatureStats, eig_tol: float = 1e-6) -> float:
    """Frechet distance between two Gaussian feature summaries.

    trace of sqrtm(cov_a cov_b) is computed from the eigendecomposition of the
    symmetrized product sqrt(cov_a) cov_b sqrt(cov_a); eigenvalues below
    -eig_tol abort, small negatives are clipped to zero.
    """
    if stats_a.mean.shape != stats_b.mean.shape:
        raise ValueError("invalid-shape: feature dimensions differ")

    def psd_sqrt(mat: np.ndarray) -> np.ndarray:
        vals, vecs = np.linalg.eigh((mat + mat.T) / 2)
        if vals.min() < -eig_tol:
            raise NumericalError(f"covariance eigenvalue {vals.min():.3e} < -{eig_tol}")
        vals = np.clip(vals, 0.0, None)
        return (vecs * np.sqrt(vals)) @ vecs.T

    sa = psd_sqrt(stats_a.cov)
    inner = sa @ stats_b.cov @ sa
    vals = np.linalg.eigvalsh((inner + inner.T) / 2)
    if vals.min() < -eig_tol:
        raise NumericalError(f"sqrtm eigenvalue {vals.min():.3e} < -{eig_tol}")
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()

    diff = stats_a.mean - stats_b.mean
    value = float(diff @ diff + np.trace(stats_a.cov) + np.trace(stats_b.cov)
                  - 2.0 * trace_sqrt)
    return max(value, 0.0)
