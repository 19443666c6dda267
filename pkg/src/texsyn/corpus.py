"""Training corpus: synthetic procedural textures, image ingestion, crop sampling.

A corpus is a list of texture records, each a single large image from which
many crops are drawn. Admission of user images follows three operational
checks: enough independent crops, enough texton repetitions per crop side
(estimated via autocorrelation), and rough luminance uniformity; the license
criterion is recorded as metadata only.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from texsyn.errors import ConfigError, DataError

SYNTH_KINDS = ("grating", "checker", "blob_noise", "brick", "dot_lattice")

MANIFEST_NAME = "manifest.txt"


@dataclass
class TextureRecord:
    id: str
    source: str  # "synthetic" | "file"
    image: np.ndarray  # uint8, (H, W, 3)
    metadata: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]


@dataclass
class CorpusManifest:
    records: list[TextureRecord]
    crop_size: int
    seed: int = 0

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate texture ids in manifest")
        for r in self.records:
            if num_grid_crops(r, self.crop_size) < 2:
                raise DataError(
                    f"texture {r.id}: too small for 2 non-overlapping "
                    f"{self.crop_size}px crops"
                )


def luminance(image: np.ndarray) -> np.ndarray:
    """Rec.601 luma of a uint8 or float RGB image, in [0, 1]."""
    img = image.astype(np.float64)
    if image.dtype == np.uint8:
        img = img / 255.0
    return 0.299 * img[..., 0] + 0.587 * img[..., 1] + 0.114 * img[..., 2]


def num_grid_crops(record: TextureRecord, crop_size: int) -> int:
    return (record.height // crop_size) * (record.width // crop_size)


# ---------------------------------------------------------------------------
# Period estimation / admission checks
# ---------------------------------------------------------------------------

def _axis_autocorr(lum: np.ndarray, axis: int) -> np.ndarray:
    """Normalized mean autocorrelation along one axis (circular, FFT-based)."""
    x = lum - lum.mean()
    spec = np.abs(np.fft.fft(x, axis=axis)) ** 2
    corr = np.fft.ifft(spec, axis=axis).real
    corr = corr.mean(axis=1 - axis)
    if corr[0] <= 1e-12:
        return np.zeros_like(corr)
    return corr / corr[0]


def estimate_period(image: np.ndarray) -> tuple[float, float]:
    """Dominant spatial period per axis via autocorrelation.

    Returns (period_h, period_w). Images without a pronounced repeating
    structure (peak autocorrelation < 0.2) report period 1.0, i.e. they behave
    like a fine-grained stochastic texture.
    """
    lum = luminance(image)
    periods = []
    for axis in range(2):
        corr = _axis_autocorr(lum, axis)
        n = corr.shape[0]
        lags = np.arange(2, n // 2 + 1)
        if len(lags) == 0:
            periods.append(1.0)
            continue
        window = corr[lags]
        peak = window.max()
        if peak < 0.2:
            periods.append(1.0)
            continue
        # Smallest local maximum close to the global one = fundamental period.
        best = lags[int(np.argmax(window))]
        for lag in lags:
            c = corr[lag]
            if c >= 0.9 * peak and corr[lag - 1] <= c and corr[(lag + 1) % n] <= c:
                best = lag
                break
        periods.append(float(best))
    return periods[0], periods[1]


def ingest_image(path: str, crop_size: int, min_texton_reps: int = 5,
                 max_luminance_cv: float = 0.5, license_tag: str = "unknown",
                 record_id: str | None = None) -> TextureRecord:
    """Admit an image file into the corpus or raise DataError naming the criterion."""
    try:
        image = np.asarray(Image.open(path).convert("RGB"))
    except OSError as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc

    record = TextureRecord(
        id=record_id or os.path.splitext(os.path.basename(path))[0],
        source="file", image=image,
        metadata={"path": os.path.abspath(path), "license": license_tag},
    )

    if num_grid_crops(record, crop_size) < 2:
        raise DataError(
            f"rejected ({path}): criterion 2, fewer than 2 independent "
            f"{crop_size}px crops"
        )

    ph, pw = estimate_period(image)
    reps = crop_size / max(ph, pw)
    record.metadata["period_h"] = ph
    record.metadata["period_w"] = pw
    if reps < min_texton_reps:
        raise DataError(
            f"rejected ({path}): criterion 3, only {reps:.1f} texton repetitions "
            f"per crop side (need {min_texton_reps})"
        )

    lum = luminance(image)
    th, tw = lum.shape[0] // 4, lum.shape[1] // 4
    tiles = lum[: 4 * th, : 4 * tw].reshape(4, th, 4, tw).mean(axis=(1, 3))
    mean = tiles.mean()
    cv = tiles.std() / mean if mean > 1e-9 else np.inf
    record.metadata["luminance_cv"] = float(cv)
    if cv > max_luminance_cv:
        raise DataError(
            f"rejected ({path}): criterion 1, per-tile luminance CV {cv:.3f} "
            f"exceeds {max_luminance_cv}"
        )
    return record


# ---------------------------------------------------------------------------
# Synthetic textures
# ---------------------------------------------------------------------------

def _color_pair(rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    a = rng.uniform(0.1, 0.9, size=3)
    b = np.clip(a + rng.choice([-1, 1]) * rng.uniform(0.3, 0.6, size=3), 0.0, 1.0)
    return a, b


def _to_rgb(field01: np.ndarray, ca: np.ndarray, cb: np.ndarray,
            rng: np.random.Generator, jitter: float) -> np.ndarray:
    img = field01[..., None] * cb + (1.0 - field01[..., None]) * ca
    if jitter > 0:
        img = img + rng.normal(0.0, jitter, size=img.shape)
    return (np.clip(img, 0.0, 1.0) * 255).round().astype(np.uint8)


def synth_texture(kind: str, rng: np.random.Generator, size: int = 256,
                  period: int | None = None, jitter: float = 0.02,
                  theta: float | None = None,
                  record_id: str | None = None) -> TextureRecord:
    """Deterministic procedural texture of the given kind."""
    if kind not in SYNTH_KINDS:
        raise ConfigError(f"unknown synthetic texture kind {kind!r}")
    period = period or int(rng.integers(6, 17))
    h, w = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    ca, cb = _color_pair(rng)
    if theta is None:
        theta = rng.uniform(0, np.pi)
    period_h = period_w = period  # effective repeat period per axis

    if kind == "grating":
        u = h * np.cos(theta) + w * np.sin(theta)
        f = 0.5 * (1 + np.sin(2 * np.pi * u / period))
        period_h = period / abs(np.cos(theta)) if abs(np.cos(theta)) > 1e-6 else 1
        period_w = period / abs(np.sin(theta)) if abs(np.sin(theta)) > 1e-6 else 1
    elif kind == "checker":
        tile = max(1, period // 2)
        f = (((h // tile) + (w // tile)) % 2).astype(np.float64)
        period_h = period_w = 2 * tile
    elif kind == "blob_noise":
        noise = rng.normal(size=(size, size))
        fk = np.fft.fftfreq(size)
        kh, kw = np.meshgrid(fk, fk, indexing="ij")
        lowpass = np.exp(-((kh**2 + kw**2) * (period**2) * 8.0))
        f = np.fft.ifft2(np.fft.fft2(noise) * lowpass).real
        f = (f - f.min()) / (np.ptp(f) + 1e-12)
        period_h = period_w = 1  # stochastic: correlation length, no exact repeat
    elif kind == "brick":
        row = h // period
        offset = (row % 2) * (period)  # half-brick stagger (brick len = 2*period)
        mortar_h = (h % period) < max(1, period // 6)
        mortar_w = ((w + offset) % (2 * period)) < max(1, period // 6)
        f = 1.0 - (mortar_h | mortar_w).astype(np.float64)
        period_h, period_w = 2 * period, 2 * period  # stagger doubles the repeat
    else:  # dot_lattice
        jh = rng.uniform(-0.15, 0.15) * period
        jw = rng.uniform(-0.15, 0.15) * period
        dh = ((h + jh) % period) - period / 2
        dw = ((w + jw) % period) - period / 2
        f = (np.sqrt(dh**2 + dw**2) < period * 0.3).astype(np.float64)

    image = _to_rgb(f, ca, cb, rng, jitter)
    return TextureRecord(
        id=record_id or f"{kind}_{period}",
        source="synthetic", image=image,
        metadata={"kind": kind, "period": period, "period_h": period_h,
                  "period_w": period_w, "size": size, "license": "synthetic"},
    )


def build_synthetic_corpus(num_textures: int = 16, crop_size: int = 64,
                           image_size: int = 256, seed: int = 0,
                           kinds: tuple[str, ...] = SYNTH_KINDS) -> CorpusManifest:
    rng = np.random.default_rng(seed)
    records = []
    for i in range(num_textures):
        kind = kinds[i % len(kinds)]
        records.append(
            synth_texture(kind, rng, size=image_size, record_id=f"{kind}_{i:03d}")
        )
    return CorpusManifest(records=records, crop_size=crop_size, seed=seed)


# ---------------------------------------------------------------------------
# Crop sampling
# ---------------------------------------------------------------------------

def crop_at(record: TextureRecord, top: int, left: int, crop_size: int) -> np.ndarray:
    if top < 0 or left < 0 or top + crop_size > record.height or left + crop_size > record.width:
        raise ValueError("invalid-input: crop outside source image")
    return record.image[top : top + crop_size, left : left + crop_size]


def sample_crops(manifest: CorpusManifest, textures_per_batch: int,
                 crops_per_texture: int, rng: np.random.Generator
                 ) -> tuple[np.ndarray, list[str]]:
    """Grouped batch: (textures_per_batch, crops_per_texture, H, W, 3) + group ids."""
    if len(manifest.records) < textures_per_batch:
        raise ConfigError(
            f"corpus has {len(manifest.records)} textures, batch needs "
            f"{textures_per_batch}"
        )
    cs = manifest.crop_size
    picks = rng.choice(len(manifest.records), size=textures_per_batch, replace=False)
    batch = np.empty((textures_per_batch, crops_per_texture, cs, cs, 3), dtype=np.uint8)
    ids = []
    for bi, ri in enumerate(picks):
        rec = manifest.records[int(ri)]
        ids.append(rec.id)
        for ci in range(crops_per_texture):
            top = int(rng.integers(0, rec.height - cs + 1))
            left = int(rng.integers(0, rec.width - cs + 1))
            batch[bi, ci] = crop_at(rec, top, left, cs)
    return batch, ids


def grid_crops(record: TextureRecord, crop_size: int, max_crops: int | None = None
               ) -> np.ndarray:
    """Non-overlapping crops on a regular grid (dataset-statistics protocol)."""
    rows = record.height // crop_size
    cols = record.width // crop_size
    crops = [
        crop_at(record, r * crop_size, c * crop_size, crop_size)
        for r in range(rows)
        for c in range(cols)
    ]
    if max_crops is not None:
        crops = crops[:max_crops]
    return np.stack(crops)


def crops_to_tensor(crops: np.ndarray):
    """uint8 (..., H, W, 3) -> float32 torch tensor (..., 3, H, W) in [-1, 1]."""
    import torch

    arr = crops.astype(np.float32) / 127.5 - 1.0
    return torch.from_numpy(np.moveaxis(arr, -1, -3).copy())


# ---------------------------------------------------------------------------
# Disk manifest
# ---------------------------------------------------------------------------

def save_corpus(manifest: CorpusManifest, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"crop_size={manifest.crop_size}", f"seed={manifest.seed}"]
    for rec in manifest.records:
        fname = f"{rec.id}.png"
        Image.fromarray(rec.image).save(os.path.join(out_dir, fname))
        meta = ";".join(f"{k}={v}" for k, v in sorted(rec.metadata.items()))
        lines.append(f"texture id={rec.id} source={rec.source} file={fname} meta={meta}")
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def load_corpus(corpus_dir: str) -> CorpusManifest:
    path = os.path.join(corpus_dir, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no {MANIFEST_NAME} in {corpus_dir}")
    crop_size, seed, records = None, 0, []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("crop_size="):
                crop_size = int(line.split("=", 1)[1])
            elif line.startswith("seed="):
                seed = int(line.split("=", 1)[1])
            elif line.startswith("texture "):
                fields = dict(part.split("=", 1) for part in line[8:].split(" ", 3))
                image = np.asarray(
                    Image.open(os.path.join(corpus_dir, fields["file"])).convert("RGB")
                )
                meta = {}
                for item in fields.get("meta", "").split(";"):
                    if "=" in item:
                        k, v = item.split("=", 1)
                        meta[k] = v
                records.append(TextureRecord(
                    id=fields["id"], source=fields["source"], image=image, metadata=meta,
                ))
            else:
                raise DataError(f"unrecognized manifest line: {line!r}")
    if crop_size is None:
        raise DataError("manifest missing crop_size")
    return CorpusManifest(records=records, crop_size=crop_size, seed=seed)
