"""Wasserstein adversarial training with grouped multi-crop batches.

Critic loss:  E[D(G(z, n, delta))] - E_textures[E_crops[D(I)]] + gp_coef * GP
Generator loss:  -E[D(G(z, n, delta))]

Every critic batch holds crops_per_texture crops from each of
textures_per_batch distinct textures, so the nested real-term expectation is
taken texture-first. The critic is stepped d_steps_per_g_step times per
generator step; an EMA shadow of the generator is maintained for sampling.
"""

from __future__ import annotations

import csv
import os
import pickle
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import Tensor

from texsyn.corpus import CorpusManifest, crops_to_tensor, sample_crops
from texsyn.critic import Critic, CriticConfig, gradient_penalty
from texsyn.errors import ConfigError, IntegrityError, NumericalError
from texsyn.generator import Generator, GeneratorConfig
from texsyn.imutil import save_image_grid

CHECKPOINT_VERSION = "texsyn-checkpoint-1"


@dataclass
class TrainConfig:
    textures_per_batch: int = 8
    crops_per_texture: int = 2
    d_steps_per_g_step: int = 2
    total_g_iterations: int = 20_000
    learning_rate: float = 0.002
    gp_coefficient: float = 0.01  # published value; literature default would be 10
    ema_decay: float = 0.999
    adam_beta1: float = 0.0
    adam_beta2: float = 0.99
    seed: int = 0
    noise_samples_per_latent: int = 1
    non_saturating: bool = False
    log_every: int = 10
    checkpoint_every: int = 2000
    sample_every: int = 2000

    def __post_init__(self):
        for name in ("textures_per_batch", "crops_per_texture", "d_steps_per_g_step",
                     "total_g_iterations", "noise_samples_per_latent"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError("ema_decay must be in (0, 1)")

    @property
    def fake_batch_size(self) -> int:
        return self.textures_per_batch * self.crops_per_texture


class EMA:
    """Exponential moving average of generator parameters (and buffers)."""

    def __init__(self, gen: Generator, decay: float):
        self.decay = decay
        self.shadow = {k: v.detach().clone().double()
                       for k, v in gen.state_dict().items()}

    def update(self, gen: Generator) -> None:
        state = gen.state_dict()
        if state.keys() != self.shadow.keys():
            raise ValueError("invalid-input: EMA/generator structure mismatch")
        with torch.no_grad():
            for k, v in state.items():
                self.shadow[k].mul_(self.decay).add_(v.double(), alpha=1.0 - self.decay)

    def generator(self, config: GeneratorConfig) -> Generator:
        gen = Generator(config)
        gen.load_state_dict({k: v.float() for k, v in self.shadow.items()})
        gen.eval()
        return gen


def make_fakes(gen: Generator, cfg: TrainConfig, rng: torch.Generator) -> Tensor:
    """Fresh fake batch; latents optionally repeated for multi-noise-per-z."""
    b = cfg.fake_batch_size
    n_latents = max(1, b // cfg.noise_samples_per_latent)
    z = torch.randn(n_latents, gen.config.latent_dim, generator=rng)
    z = z.repeat_interleave(b // n_latents, dim=0)
    if z.shape[0] < b:
        z = torch.cat([z, z[: b - z.shape[0]]])
    noise = gen.sample_noise(rng, batch=b)
    phases = gen.sample_phases(rng)
    return gen.generate(z, noise, phases)


def critic_step(gen: Generator, critic: Critic, d_opt: torch.optim.Optimizer,
                real_groups: Tensor, cfg: TrainConfig, rng: torch.Generator
                ) -> dict[str, float]:
    """One critic update on a grouped real batch (T, K, 3, R, R)."""
    if real_groups.ndim != 5:
        raise ValueError("invalid-batch: expected grouped crops (T, K, 3, R, R)")
    t, k = real_groups.shape[:2]
    real_flat = real_groups.reshape(t * k, *real_groups.shape[2:])

    with torch.no_grad():
        fakes = make_fakes(gen, cfg, rng)

    d_opt.zero_grad(set_to_none=True)
    fake_scores = critic(fakes, rng=rng)
    real_scores = critic(real_flat, rng=rng).reshape(t, k)
    if cfg.non_saturating:
        w_loss = F.softplus(fake_scores).mean() + F.softplus(-real_scores.mean(dim=1)).mean()
    else:
        w_loss = fake_scores.mean() - real_scores.mean(dim=1).mean()
    gp = gradient_penalty(critic, real_flat, fakes, rng)
    loss = w_loss + cfg.gp_coefficient * gp
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite critic loss: {loss.item()}")
    loss.backward()
    d_opt.step()
    return {"d_loss": float(loss.item()), "gp": float(gp.item())}


def generator_step(gen: Generator, critic: Critic, g_opt: torch.optim.Optimizer,
                   cfg: TrainConfig, rng: torch.Generator, ema: EMA | None = None
                   ) -> float:
    g_opt.zero_grad(set_to_none=True)
    fakes = make_fakes(gen, cfg, rng)
    scores = critic(fakes, rng=rng)
    loss = F.softplus(-scores).mean() if cfg.non_saturating else -scores.mean()
    if not torch.isfinite(loss):
        raise NumericalError(f"non-finite generator loss: {loss.item()}")
    loss.backward()
    g_opt.step()
    if ema is not None:
        ema.update(gen)
    return float(loss.item())


def make_optimizers(gen: Generator, critic: Critic, cfg: TrainConfig
                    ) -> tuple[torch.optim.Optimizer, torch.optim.Optimizer]:
    betas = (cfg.adam_beta1, cfg.adam_beta2)
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.learning_rate, betas=betas)
    d_opt = torch.optim.Adam(critic.parameters(), lr=cfg.learning_rate, betas=betas)
    return g_opt, d_opt


# ---------------------------------------------------------------------------
# Checkpointing (pickled numpy trees; byte-deterministic round trips)
# ---------------------------------------------------------------------------

def _to_plain(obj):
    if isinstance(obj, torch.Tensor):
        return {"__tensor__": str(obj.dtype), "data": obj.detach().cpu().numpy()}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_to_plain(v) for v in obj)
    return obj


def _from_plain(obj):
    if isinstance(obj, dict):
        if "__tensor__" in obj:
            t = torch.from_numpy(np.array(obj["data"]))
            return t.to(getattr(torch, obj["__tensor__"].removeprefix("torch.")))
        return {k: _from_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return type(obj)(_from_plain(v) for v in obj)
    return obj


@dataclass
class Checkpoint:
    iteration: int
    gen_config: GeneratorConfig
    critic_config: CriticConfig
    train_config: TrainConfig
    gen_state: dict
    ema_state: dict
    critic_state: dict
    g_opt_state: dict
    d_opt_state: dict
    torch_rng_state: bytes
    numpy_rng_state: dict

    def build_generator(self) -> Generator:
        gen = Generator(self.gen_config)
        gen.load_state_dict(self.gen_state)
        return gen

    def build_ema_generator(self) -> Generator:
        gen = Generator(self.gen_config)
        gen.load_state_dict({k: v.float() for k, v in self.ema_state.items()})
        gen.eval()
        return gen

    def build_critic(self) -> Critic:
        critic = Critic(self.critic_config)
        critic.load_state_dict(self.critic_state)
        return critic


_SECTIONS = ("iteration", "gen_config", "critic_config", "train_config", "gen_state",
             "ema_state", "critic_state", "g_opt_state", "d_opt_state",
             "torch_rng_state", "numpy_rng_state")


def save_checkpoint(ckpt: Checkpoint, path: str) -> None:
    payload = {
        "version": CHECKPOINT_VERSION,
        "iteration": ckpt.iteration,
        "gen_config": asdict(ckpt.gen_config),
        "critic_config": asdict(ckpt.critic_config),
        "train_config": asdict(ckpt.train_config),
        "gen_state": _to_plain(ckpt.gen_state),
        "ema_state": _to_plain(ckpt.ema_state),
        "critic_state": _to_plain(ckpt.critic_state),
        "g_opt_state": _to_plain(ckpt.g_opt_state),
        "d_opt_state": _to_plain(ckpt.d_opt_state),
        "torch_rng_state": ckpt.torch_rng_state,
        "numpy_rng_state": ckpt.numpy_rng_state,
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh, protocol=4)


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            payload = pickle.load(fh)
    except (OSError, pickle.UnpicklingError, EOFError) as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("version") != CHECKPOINT_VERSION:
        raise IntegrityError(
            f"section 'version': expected {CHECKPOINT_VERSION}, "
            f"got {payload.get('version') if isinstance(payload, dict) else type(payload)}"
        )
    for section in _SECTIONS:
        if section not in payload:
            raise IntegrityError(f"section {section!r}: missing")
    try:
        gen_config = GeneratorConfig(**payload["gen_config"])
        critic_config = CriticConfig(**payload["critic_config"])
        train_config = TrainConfig(**payload["train_config"])
    except (TypeError, ValueError, ConfigError) as exc:
        raise IntegrityError(f"section 'config': {exc}") from exc
    ckpt = Checkpoint(
        iteration=payload["iteration"],
        gen_config=gen_config,
        critic_config=critic_config,
        train_config=train_config,
        gen_state=_from_plain(payload["gen_state"]),
        ema_state={k: v.double() for k, v in _from_plain(payload["ema_state"]).items()},
        critic_state=_from_plain(payload["critic_state"]),
        g_opt_state=_from_plain(payload["g_opt_state"]),
        d_opt_state=_from_plain(payload["d_opt_state"]),
        torch_rng_state=payload["torch_rng_state"],
        numpy_rng_state=payload["numpy_rng_state"],
    )
    try:
        ckpt.build_generator()
        ckpt.build_critic()
    except (RuntimeError, ValueError) as exc:
        raise IntegrityError(f"section 'gen_state'/'critic_state': {exc}") from exc
    return ckpt


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

def snapshot(gen: Generator, critic: Critic, ema: EMA,
             g_opt, d_opt, iteration: int,
             gen_config: GeneratorConfig, critic_config: CriticConfig,
             train_config: TrainConfig, torch_rng: torch.Generator,
             np_rng: np.random.Generator) -> Checkpoint:
    return Checkpoint(
        iteration=iteration,
        gen_config=gen_config, critic_config=critic_config, train_config=train_config,
        gen_state={k: v.detach().clone() for k, v in gen.state_dict().items()},
        ema_state={k: v.clone() for k, v in ema.shadow.items()},
        critic_state={k: v.detach().clone() for k, v in critic.state_dict().items()},
        g_opt_state=g_opt.state_dict(),
        d_opt_state=d_opt.state_dict(),
        torch_rng_state=bytes(torch_rng.get_state().numpy().tobytes()),
        numpy_rng_state=np_rng.bit_generator.state,
    )


def train_loop(manifest: CorpusManifest, gen_config: GeneratorConfig,
               critic_config: CriticConfig, train_config: TrainConfig,
               run_dir: str | None = None, callbacks: list | None = None,
               ) -> Checkpoint:
    """Run the full schedule; returns the final checkpoint.

    callbacks: callables (iteration, gen, ema, logs: dict) -> None, invoked
    every log_every iterations on immutable snapshots.
    """
    if not manifest.records:
        raise ConfigError("empty corpus")
    if len(manifest.records) < train_config.textures_per_batch:
        raise ConfigError(
            f"corpus has {len(manifest.records)} textures; batch spec needs "
            f"{train_config.textures_per_batch}"
        )
    if manifest.crop_size != gen_config.train_resolution:
        raise ConfigError(
            f"corpus crop_size {manifest.crop_size} != train_resolution "
            f"{gen_config.train_resolution}"
        )

    init_rng = torch.Generator().manual_seed(train_config.seed)
    gen = Generator(gen_config, rng=init_rng)
    critic = Critic(critic_config, rng=init_rng)
    ema = EMA(gen, train_config.ema_decay)
    g_opt, d_opt = make_optimizers(gen, critic, train_config)
    torch_rng = torch.Generator().manual_seed(train_config.seed + 1)
    np_rng = np.random.default_rng(train_config.seed + 2)
    sample_rng_seed = train_config.seed + 3

    loss_writer = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        loss_file = open(os.path.join(run_dir, "losses.csv"), "w", newline="")
        loss_writer = csv.writer(loss_file)
        loss_writer.writerow(["iteration", "d_loss", "g_loss", "gp"])

    logs: dict[str, float] = {}
    try:
        for iteration in range(1, train_config.total_g_iterations + 1):
            for _ in range(train_config.d_steps_per_g_step):
                crops, _ = sample_crops(
                    manifest, train_config.textures_per_batch,
                    train_config.crops_per_texture, np_rng,
                )
                d_logs = critic_step(gen, critic, d_opt,
                                     crops_to_tensor(crops), train_config, torch_rng)
            g_loss = generator_step(gen, critic, g_opt, train_config, torch_rng, ema)
            logs = {**d_logs, "g_loss": g_loss}

            if iteration % train_config.log_every == 0 or iteration == 1:
                if loss_writer is not None:
                    loss_writer.writerow(
                        [iteration, f"{logs['d_loss']:.6f}", f"{g_loss:.6f}",
                         f"{logs['gp']:.6f}"]
                    )
                    loss_file.flush()
                for cb in callbacks or []:
                    cb(iteration, gen, ema, dict(logs))

            if run_dir is not None and iteration % train_config.sample_every == 0:
                ema_gen = ema.generator(gen_config)
                with torch.no_grad():
                    grid = ema_gen.sample(
                        torch.Generator().manual_seed(sample_rng_seed), batch=16
                    )
                save_image_grid(grid, os.path.join(run_dir, f"samples_{iteration:07d}.png"))

            if run_dir is not None and iteration % train_config.checkpoint_every == 0:
                ckpt = snapshot(gen, critic, ema, g_opt, d_opt, iteration,
                                gen_config, critic_config, train_config,
                                torch_rng, np_rng)
                save_checkpoint(ckpt, os.path.join(run_dir, f"ckpt_{iteration:07d}.pkl"))
    finally:
        if loss_writer is not None:
            loss_file.close()

    final = snapshot(gen, critic, ema, g_opt, d_opt, train_config.total_g_iterations,
                     gen_config, critic_config, train_config, torch_rng, np_rng)
    if run_dir is not None:
        save_checkpoint(final, os.path.join(run_dir, "ckpt_final.pkl"))
    return final
