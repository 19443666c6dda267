import numpy as np
import pytest
import torch

from texsyn.critic import CriticConfig
from texsyn.generator import GeneratorConfig

torch.set_num_threads(1)

TINY_CHANNELS = {4: 16, 8: 16, 16: 16}


def tiny_gen_config(**overrides) -> GeneratorConfig:
    base = dict(
        latent_dim=16,
        train_resolution=16,
        channels_per_resolution=dict(TINY_CHANNELS),
        textons_per_module=4,
        mapping_layers=2,
    )
    base.update(overrides)
    return GeneratorConfig(**base)


def tiny_critic_config(**overrides) -> CriticConfig:
    base = dict(
        input_resolution=16,
        channels_per_resolution=dict(TINY_CHANNELS),
        input_noise_sigma=0.0,
    )
    base.update(overrides)
    return CriticConfig(**base)


# One human-readable verdict line per end-to-end acceptance criterion,
# printed after the test summary regardless of capture settings.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng() -> torch.Generator:
    return torch.Generator().manual_seed(0)


@pytest.fixture
def np_rng() -> np.random.Generator:
    return np.random.default_rng(0)
