"""Command-line entry point.

Subcommands: corpus build/ingest, train, sample, metrics, invert,
interpolate. Every command is reproducible from (config, seed); run outputs
land in a timestamped directory under --out or $TEXSYN_OUT_ROOT.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

from __future__ import annotations

import csv
import json
import os
import sys
import time

import click
import numpy as np
import torch
from PIL import Image

from texsyn import corpus as corpus_mod
from texsyn.config import load_run_config, save_run_config
from texsyn.errors import ConfigError, DataError, IntegrityError, NumericalError
from texsyn.features import RandomConvFeatures
from texsyn.imutil import save_grayscale, save_image, save_image_grid
from texsyn.inversion import InversionConfig, interpolate_latent, invert
from texsyn.metrics import (
    DEFAULT_TIPP_THRESHOLDS,
    dataset_sigma_maps,
    feature_stats,
    fid,
    model_sigma_maps,
    tipp,
)
from texsyn.training import load_checkpoint, train_loop


def _resolve_out(out: str | None, tag: str) -> str:
    if out is None:
        root = os.environ.get("TEXSYN_OUT_ROOT", "runs")
        out = os.path.join(root, f"{tag}_{time.strftime('%Y%m%d-%H%M%S')}")
    os.makedirs(out, exist_ok=True)
    return out


@click.group()
def cli():
    """Texture synthesis GAN toolkit."""


@cli.group()
def corpus():
    """Corpus construction commands."""


@corpus.command("build")
@click.option("--out", required=True, type=click.Path())
@click.option("--textures", default=16, show_default=True)
@click.option("--crop-size", default=64, show_default=True)
@click.option("--image-size", default=256, show_default=True)
@click.option("--seed", default=0, show_default=True)
def corpus_build(out, textures, crop_size, image_size, seed):
    """Write a synthetic procedural corpus (manifest + PNG images)."""
    manifest = corpus_mod.build_synthetic_corpus(
        num_textures=textures, crop_size=crop_size, image_size=image_size, seed=seed
    )
    path = corpus_mod.save_corpus(manifest, out)
    click.echo(f"wrote {len(manifest.records)} textures to {path}")


@corpus.command("ingest")
@click.option("--out", required=True, type=click.Path())
@click.option("--crop-size", default=64, show_default=True)
@click.option("--min-texton-reps", default=5, show_default=True)
@click.option("--license-tag", default="unknown", show_default=True)
@click.argument("images", nargs=-1, required=True, type=click.Path(exists=True))
def corpus_ingest(out, crop_size, min_texton_reps, license_tag, images):
    """Admit user-supplied images into a corpus, checking the admission criteria."""
    if os.path.exists(os.path.join(out, corpus_mod.MANIFEST_NAME)):
        manifest = corpus_mod.load_corpus(out)
        if manifest.crop_size != crop_size:
            raise ConfigError(
                f"existing corpus crop_size {manifest.crop_size} != {crop_size}"
            )
    else:
        manifest = corpus_mod.CorpusManifest(records=[], crop_size=crop_size)
    for path in images:
        record = corpus_mod.ingest_image(
            path, crop_size, min_texton_reps=min_texton_reps, license_tag=license_tag
        )
        manifest.records.append(record)
        click.echo(f"admitted {record.id} (period_h={record.metadata['period_h']}, "
                   f"period_w={record.metadata['period_w']})")
    corpus_mod.save_corpus(manifest, out)


@cli.command()
@click.option("--corpus", "corpus_dir", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--set", "overrides", multiple=True,
              help="key=value override, repeatable")
@click.option("--out", type=click.Path())
def train(corpus_dir, config_path, overrides, out):
    """Adversarial training run; writes checkpoints, losses.csv, sample grids."""
    cfg = load_run_config(config_path, list(overrides))
    manifest = corpus_mod.load_corpus(corpus_dir)
    run_dir = _resolve_out(out, "train")
    save_run_config(cfg, os.path.join(run_dir, "config.txt"))
    ckpt = train_loop(manifest, cfg.generator_config(), cfg.critic_config(),
                      cfg.train_config(), run_dir=run_dir)
    click.echo(f"finished {ckpt.iteration} generator iterations; run dir: {run_dir}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--count", default=16, show_default=True)
@click.option("--resolution", default=0, show_default=True,
              help="output side; 0 = training resolution")
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path())
def sample(checkpoint, count, resolution, seed, out):
    """Sample the EMA generator, optionally above the training resolution."""
    ckpt = load_checkpoint(checkpoint)
    gen = ckpt.build_ema_generator()
    res = resolution or ckpt.gen_config.train_resolution
    out = _resolve_out(out, "sample")
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        imgs = gen.sample(rng, batch=count, out_resolution=res)
    for i in range(count):
        save_image(imgs[i], os.path.join(out, f"sample_{i:03d}.png"))
    save_image_grid(imgs, os.path.join(out, "grid.png"))
    click.echo(f"wrote {count} samples at {res}x{res} to {out}")


@cli.command()
@click.option("--checkpoint", type=click.Path(exists=True))
@click.option("--corpus", "corpus_dir", type=click.Path(exists=True))
@click.option("--which", type=click.Choice(["tipp", "fid", "sigma-maps"]),
              required=True)
@click.option("--latents", default=100, show_default=True)
@click.option("--crops-per-latent", default=20, show_default=True)
@click.option("--repeats", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path())
def metrics(checkpoint, corpus_dir, which, latents, crops_per_latent, repeats,
            seed, out):
    """Evaluate TIPP / FID / sigma-maps for a checkpoint and/or corpus."""
    out = _resolve_out(out, f"metrics_{which}")
    gen = None
    if checkpoint:
        gen = load_checkpoint(checkpoint).build_ema_generator()

    if which == "sigma-maps":
        if gen is None:
            raise ConfigError("sigma-maps needs --checkpoint")
        maps = model_sigma_maps(gen, latents, crops_per_latent, seed)
        for m in maps:
            save_grayscale(m.sigma, os.path.join(out, f"sigma_{m.latent_id}.png"))
        click.echo(f"wrote {len(maps)} sigma maps to {out}")
        return

    if which == "tipp":
        if gen is not None:
            per_repeat = [
                [tipp(model_sigma_maps(gen, latents, crops_per_latent, seed + r), t)
                 for t in DEFAULT_TIPP_THRESHOLDS]
                for r in range(repeats)
            ]
        elif corpus_dir:
            manifest = corpus_mod.load_corpus(corpus_dir)
            maps = dataset_sigma_maps(manifest, crops_per_latent)
            per_repeat = [[tipp(maps, t) for t in DEFAULT_TIPP_THRESHOLDS]]
        else:
            raise ConfigError("tipp needs --checkpoint or --corpus")
        arr = np.asarray(per_repeat)
        mean = arr.mean(axis=0)
        ci = (1.96 * arr.std(axis=0, ddof=1) / np.sqrt(arr.shape[0])
              if arr.shape[0] > 1 else np.zeros_like(mean))
        csv_path = os.path.join(out, "tipp.csv")
        with open(csv_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "tipp_mean", "tipp_ci"])
            for t, m, c in zip(DEFAULT_TIPP_THRESHOLDS, mean, ci):
                writer.writerow([f"{t:.6f}", f"{m:.6f}", f"{c:.6f}"])
        summary = {
            "thresholds": list(DEFAULT_TIPP_THRESHOLDS),
            "tipp_mean": mean.tolist(),
            "tipp_ci": ci.tolist(),
        }
        with open(os.path.join(out, "tipp.json"), "w") as fh:
            json.dump(summary, fh, indent=2)
        click.echo(f"wrote {csv_path}")
        return

    # FID between generated samples and corpus crops
    if gen is None or not corpus_dir:
        raise ConfigError("fid needs both --checkpoint and --corpus")
    manifest = corpus_mod.load_corpus(corpus_dir)
    extractor = RandomConvFeatures()
    real = torch.cat([
        corpus_mod.crops_to_tensor(
            corpus_mod.grid_crops(rec, manifest.crop_size, max_crops=crops_per_latent)
        )
        for rec in manifest.records
    ])
    rng = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        fakes = torch.cat([gen.sample(rng, batch=crops_per_latent)
                           for _ in range(latents)])
    value = fid(feature_stats(real, extractor), feature_stats(fakes, extractor))
    with open(os.path.join(out, "fid.json"), "w") as fh:
        json.dump({"fid": value, "num_real": int(real.shape[0]),
                   "num_fake": int(fakes.shape[0])}, fh, indent=2)
    click.echo(f"fid={value:.4f}")


@cli.command("invert")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--target", required=True, type=click.Path(exists=True))
@click.option("--loss", "loss_kind", default="gram", show_default=True,
              type=click.Choice(["gram", "l2", "content"]))
@click.option("--iterations", default=5000, show_default=True)
@click.option("--learning-rate", default=0.001, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path())
def invert_cmd(checkpoint, target, loss_kind, iterations, learning_rate, seed, out):
    """Recover a style vector matching a target texture image."""
    ckpt = load_checkpoint(checkpoint)
    gen = ckpt.build_ema_generator()
    res = ckpt.gen_config.train_resolution
    record = corpus_mod.TextureRecord(
        id="target", source="file",
        image=np.asarray(Image.open(target).convert("RGB")),
    )
    if record.height < res or record.width < res:
        raise DataError(f"target smaller than generator resolution {res}")
    np_rng = np.random.default_rng(seed)

    def provider():
        top = int(np_rng.integers(0, record.height - res + 1))
        left = int(np_rng.integers(0, record.width - res + 1))
        return corpus_mod.crops_to_tensor(corpus_mod.crop_at(record, top, left, res))

    config = InversionConfig(loss_kind=loss_kind, iterations=iterations,
                             learning_rate=learning_rate)
    rng = torch.Generator().manual_seed(seed)
    result = invert(gen, provider, config, rng)

    out = _resolve_out(out, "invert")
    np.save(os.path.join(out, "w_star.npy"),
            result.w_star.numpy().astype(np.float32))
    with open(os.path.join(out, "loss_trace.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "loss"])
        for i, v in enumerate(result.loss_trace):
            writer.writerow([i, f"{v:.8f}"])
    with torch.no_grad():
        renders = torch.stack([
            gen.synthesize(result.w_star, gen.sample_noise(rng), gen.sample_phases(rng))
            for _ in range(3)
        ])
    side_by_side = torch.cat([provider()[None], renders])
    save_image_grid(side_by_side, os.path.join(out, "reconstruction.png"),
                    cols=side_by_side.shape[0])
    click.echo(f"final {loss_kind} loss {result.final_loss:.6f}; outputs in {out}")


@cli.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--seed-a", default=0, show_default=True)
@click.option("--seed-b", default=1, show_default=True)
@click.option("--steps", default=8, show_default=True)
@click.option("--space", default="W", show_default=True,
              type=click.Choice(["Z", "W"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", type=click.Path())
def interpolate(checkpoint, seed_a, seed_b, steps, space, seed, out):
    """Render frames along a straight latent path between two seeds."""
    ckpt = load_checkpoint(checkpoint)
    gen = ckpt.build_ema_generator()
    dim = ckpt.gen_config.latent_dim
    z_a = torch.randn(dim, generator=torch.Generator().manual_seed(seed_a))
    z_b = torch.randn(dim, generator=torch.Generator().manual_seed(seed_b))
    rng = torch.Generator().manual_seed(seed)
    frames = interpolate_latent(gen, z_a, z_b, steps, space, rng)
    out = _resolve_out(out, "interp")
    for i, frame in enumerate(frames):
        save_image(frame, os.path.join(out, f"frame_{i:03d}.png"))
    save_image_grid(torch.stack(frames), os.path.join(out, "strip.png"), cols=steps)
    click.echo(f"wrote {steps} frames to {out}")


def main() -> None:
    try:
        cli.main(standalone_mode=False)
    except click.ClickException as exc:
        exc.show()
        sys.exit(2)
    except click.Abort:
        sys.exit(1)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(2)
    except (DataError, IntegrityError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(3)
    except NumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(4)


if __name__ == "__main__":
    main()
