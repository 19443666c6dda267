import math

import pytest
import torch
from torch import nn

from conftest import tiny_critic_config
from texsyn.critic import Critic, CriticConfig, _gradient_penalty_at, gradient_penalty


def make_critic(seed=0, **overrides):
    return Critic(tiny_critic_config(**overrides),
                  rng=torch.Generator().manual_seed(seed))


class LinearCritic(nn.Module):
    """D(x) = <v, x> + b; gradient w.r.t. x equals v everywhere."""

    def __init__(self, v: torch.Tensor, b: float = 0.0):
        super().__init__()
        self.v = nn.Parameter(v)
        self.b = b

    def forward(self, x, rng=None):
        return (x.flatten(1) * self.v.flatten()).sum(dim=1) + self.b


class ConstantCritic(nn.Module):
    def __init__(self, value: float):
        super().__init__()
        self.value = nn.Parameter(torch.tensor(value))

    def forward(self, x, rng=None):
        return self.value.expand(x.shape[0]) * 1.0


class TestScore:
    def test_deterministic_without_noise(self, rng):
        critic = make_critic(input_noise_sigma=0.0)
        img = torch.rand(2, 3, 16, 16, generator=rng) * 2 - 1
        assert torch.equal(critic(img), critic(img))

    def test_noise_changes_scores(self, rng):
        critic = make_critic(input_noise_sigma=0.01)
        img = torch.rand(1, 3, 16, 16, generator=rng)
        a = critic(img, rng=torch.Generator().manual_seed(1))
        b = critic(img, rng=torch.Generator().manual_seed(2))
        assert not torch.equal(a, b)

    def test_noisy_score_deterministic_given_seed(self, rng):
        critic = make_critic(input_noise_sigma=0.01)
        img = torch.rand(1, 3, 16, 16, generator=rng)
        a = critic(img, rng=torch.Generator().manual_seed(5))
        b = critic(img, rng=torch.Generator().manual_seed(5))
        assert torch.equal(a, b)

    def test_fresh_critic_scores_finite(self, rng):
        critic = make_critic()
        img = torch.rand(16, 3, 16, 16, generator=rng) * 2 - 1
        assert torch.isfinite(critic(img)).all()

    def test_rejects_wrong_shape(self):
        critic = make_critic()
        with pytest.raises(ValueError, match="invalid-shape"):
            critic(torch.zeros(1, 3, 8, 8))

    def test_single_image_gives_scalar(self, rng):
        critic = make_critic()
        assert critic(torch.rand(3, 16, 16, generator=rng)).ndim == 0

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError, match="invalid-config"):
            CriticConfig(input_resolution=16, input_noise_sigma=-0.1)


class TestGradientPenalty:
    def test_unit_gradient_critic_gives_zero(self, rng):
        n = 3 * 16 * 16
        v = torch.full((3, 16, 16), 1.0 / math.sqrt(n))  # ||grad|| = 1 exactly
        critic = LinearCritic(v)
        real = torch.rand(4, 3, 16, 16, generator=rng)
        fake = torch.rand(4, 3, 16, 16, generator=rng)
        assert gradient_penalty(critic, real, fake, rng).item() < 1e-6

    def test_constant_critic_gives_one(self, rng):
        critic = ConstantCritic(2.5)
        real = torch.rand(4, 3, 16, 16, generator=rng)
        fake = torch.rand(4, 3, 16, 16, generator=rng)
        assert abs(gradient_penalty(critic, real, fake, rng).item() - 1.0) < 1e-6

    def test_matches_closed_form_linear_critic(self, rng):
        # ||grad D|| = ||v||, independent of the interpolation point
        v = torch.tensor([[3.0], [4.0]]).reshape(2, 1, 1)  # norm 5 over 2 "pixels"

        class TinyLinear(nn.Module):
            def forward(self, x, rng=None):
                return (x.flatten(1) * v.flatten()).sum(dim=1)

        real = torch.rand(6, 2, 1, 1, generator=rng)
        fake = torch.rand(6, 2, 1, 1, generator=rng)
        got = gradient_penalty(TinyLinear(), real, fake, rng).item()
        assert abs(got - (5.0 - 1.0) ** 2) < 1e-6

    def test_nonnegative(self, rng):
        critic = make_critic()
        real = torch.rand(4, 3, 16, 16, generator=rng) * 2 - 1
        fake = torch.rand(4, 3, 16, 16, generator=rng) * 2 - 1
        for _ in range(5):
            assert gradient_penalty(critic, real, fake, rng).item() >= 0.0

    def test_swap_symmetry_with_mirrored_eps(self, rng):
        critic = make_critic()
        real = torch.rand(4, 3, 16, 16, generator=rng) * 2 - 1
        fake = torch.rand(4, 3, 16, 16, generator=rng) * 2 - 1
        eps = torch.rand(4, 1, 1, 1, generator=rng)
        a = _gradient_penalty_at(critic, real, fake, eps)
        b = _gradient_penalty_at(critic, fake, real, 1.0 - eps)
        assert abs(a.item() - b.item()) < 1e-6

    def test_rejects_empty_batch(self, rng):
        critic = make_critic()
        empty = torch.zeros(0, 3, 16, 16)
        with pytest.raises(ValueError, match="invalid-batch"):
            gradient_penalty(critic, empty, empty, rng)

    def test_rejects_mismatched_shapes(self, rng):
        critic = make_critic()
        with pytest.raises(ValueError, match="invalid-batch"):
            gradient_penalty(critic, torch.zeros(2, 3, 16, 16),
                             torch.zeros(3, 3, 16, 16), rng)
