"""Flat key=value run configuration with strict validation.

One text file drives a whole run; CLI flags override file values, and every
run directory gets a snapshot sufficient to replay the command. Unknown keys
are rejected so typos fail before any work starts.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from texsyn.critic import CriticConfig
from texsyn.errors import ConfigError
from texsyn.generator import GeneratorConfig
from texsyn.training import TrainConfig


@dataclass
class RunConfig:
    # generator
    latent_dim: int = 128
    base_resolution: int = 4
    train_resolution: int = 64
    tb_cutoff_resolution: int = 0  # 0 -> train_resolution // 4
    textons_per_module: int = 16
    tb_mode: str = "multi_scale"
    fixed_phase: bool = False
    per_axis_phase: bool = False
    tb_condition_on_latent: bool = False
    mapping_layers: int = 4
    channel_base: int = 2048
    channel_max: int = 128
    # critic
    input_noise_sigma: float = 0.01
    # training
    textures_per_batch: int = 8
    crops_per_texture: int = 2
    d_steps_per_g_step: int = 2
    total_g_iterations: int = 20_000
    learning_rate: float = 0.002
    gp_coefficient: float = 0.01
    ema_decay: float = 0.999
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    noise_samples_per_latent: int = 1
    non_saturating: bool = False
    log_every: int = 10
    checkpoint_every: int = 2000
    sample_every: int = 2000
    # corpus
    corpus_textures: int = 16
    crop_size: int = 64
    corpus_image_size: int = 256
    # metrics protocol
    metric_latents: int = 100
    metric_crops_per_latent: int = 20
    metric_repeats: int = 5
    # inversion
    inversion_iterations: int = 5000
    inversion_learning_rate: float = 0.001
    inversion_crops_per_eval: int = 1
    # shared
    seed: int = 0

    def channels(self) -> dict[int, int]:
        out, res = {}, self.base_resolution
        while res <= self.train_resolution:
            out[res] = max(8, min(self.channel_max, self.channel_base // res))
            res *= 2
        return out

    def generator_config(self) -> GeneratorConfig:
        try:
            return GeneratorConfig(
                latent_dim=self.latent_dim,
                base_resolution=self.base_resolution,
                train_resolution=self.train_resolution,
                tb_cutoff_resolution=self.tb_cutoff_resolution or None,
                channels_per_resolution=self.channels(),
                textons_per_module=self.textons_per_module,
                tb_mode=self.tb_mode,
                fixed_phase=self.fixed_phase,
                per_axis_phase=self.per_axis_phase,
                tb_condition_on_latent=self.tb_condition_on_latent,
                mapping_layers=self.mapping_layers,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def critic_config(self) -> CriticConfig:
        return CriticConfig(
            input_resolution=self.train_resolution,
            base_resolution=self.base_resolution,
            channels_per_resolution=self.channels(),
            input_noise_sigma=self.input_noise_sigma,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            textures_per_batch=self.textures_per_batch,
            crops_per_texture=self.crops_per_texture,
            d_steps_per_g_step=self.d_steps_per_g_step,
            total_g_iterations=self.total_g_iterations,
            learning_rate=self.learning_rate,
            gp_coefficient=self.gp_coefficient,
            ema_decay=self.ema_decay,
            adam_beta1=self.adam_beta1,
            adam_beta2=self.adam_beta2,
            seed=self.seed,
            noise_samples_per_latent=self.noise_samples_per_latent,
            non_saturating=self.non_saturating,
            log_every=self.log_every,
            checkpoint_every=self.checkpoint_every,
            sample_every=self.sample_every,
        )


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    raw = raw.strip()
    if kind == "bool":
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key}: expected boolean, got {raw!r}")
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"key {key}: {exc}") from exc
    return raw


def parse_assignments(pairs: list[str]) -> dict:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, raw = pair.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        out[key] = _parse_value(key, raw)
    return out


def load_run_config(path: str | None = None, overrides: list[str] | None = None
                    ) -> RunConfig:
    values = {}
    if path is not None:
        with open(path) as fh:
            lines = [
                ln.strip() for ln in fh
                if ln.strip() and not ln.strip().startswith("#")
            ]
        values.update(parse_assignments(lines))
    values.update(parse_assignments(overrides or []))
    cfg = RunConfig(**values)
    cfg.generator_config()  # validate the merged view eagerly
    cfg.train_config()
    return cfg


def save_run_config(cfg: RunConfig, path: str) -> None:
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            fh.write(f"{f.name}={getattr(cfg, f.name)}\n")
