import math

import pytest
import torch

from texsyn.texton import (
    TWO_PI,
    TextonBroadcast,
    compute_broadcast_map,
    sample_phase,
    sigmoid_freq,
)


def scalar_broadcast_map(raw_freq, phase, amplitude, offset, delta, H, W):
    """Per-pixel reference evaluation with python floats (1-based coords)."""
    raw_freq = torch.as_tensor(raw_freq).detach()
    sig = lambda x: 1.0 / (1.0 + math.exp(-x))
    fh, fw = sig(float(raw_freq[0])), sig(float(raw_freq[1]))
    out = torch.empty(H, W, dtype=torch.float64)
    for h in range(1, H + 1):
        for w in range(1, W + 1):
            arg = TWO_PI * (fh * h + fw * w) + float(phase) + float(delta)
            out[h - 1, w - 1] = float(amplitude) * math.sin(arg) + float(offset)
    return out


def scalar_tb_forward(bank: TextonBroadcast, delta, H, W):
    P, C = bank.num_textons, bank.channels
    textons = bank.textons.detach()
    out = torch.zeros(C, H, W, dtype=torch.float64)
    for i in range(P):
        bm = scalar_broadcast_map(
            bank.raw_freq[i].detach(), bank.phase[i].detach(),
            bank.amplitude[i].detach(), bank.offset[i].detach(), delta, H, W,
        )
        for c in range(C):
            out[c] += float(textons[i, c]) * bm
    return out


def random_bank(rng, P, C) -> TextonBroadcast:
    return TextonBroadcast(P, C, rng=rng).double()


class TestSigmoidFreq:
    def test_zero_maps_to_half(self):
        assert torch.allclose(
            sigmoid_freq(torch.zeros(2)), torch.full((2,), 0.5)
        )

    def test_asymptotes_stay_inside_unit_interval(self):
        out = sigmoid_freq(torch.tensor([30.0, -30.0], dtype=torch.float64))
        assert out[0] < 1.0 and out[0] > 0.99
        assert out[1] > 0.0 and out[1] < 0.01

    def test_matches_scalar_reference(self):
        x = torch.tensor([1.2, -0.7], dtype=torch.float64)
        expected = torch.tensor(
            [1 / (1 + math.exp(-1.2)), 1 / (1 + math.exp(0.7))], dtype=torch.float64
        )
        assert torch.allclose(sigmoid_freq(x), expected, atol=1e-12)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError, match="invalid-parameter"):
            sigmoid_freq(torch.tensor([float("nan"), 0.0]))


class TestBroadcastMap:
    def test_zero_amplitude_gives_constant_offset(self):
        bm = compute_broadcast_map(
            torch.randn(2), torch.tensor(0.3), torch.tensor(0.0),
            torch.tensor(0.5), torch.tensor(1.1), 3, 3,
        )
        assert torch.allclose(bm, torch.full((3, 3), 0.5))

    def test_half_frequency_zeroes_on_integer_grid(self):
        # sigmoid(0)=0.5 per axis -> sin(pi*(h+w)) = 0 at integer coordinates
        bm = compute_broadcast_map(
            torch.zeros(2, dtype=torch.float64), torch.tensor(0.0),
            torch.tensor(1.0), torch.tensor(0.0), torch.tensor(0.0), 4, 4,
        )
        assert bm.abs().max() < 1e-12

    def test_matches_per_pixel_oracle(self, rng):
        for _ in range(10):
            raw_freq = torch.randn(2, generator=rng, dtype=torch.float64)
            phase = torch.randn((), generator=rng, dtype=torch.float64)
            amp = torch.randn((), generator=rng, dtype=torch.float64)
            off = torch.randn((), generator=rng, dtype=torch.float64)
            delta = torch.rand((), generator=rng, dtype=torch.float64) * TWO_PI
            got = compute_broadcast_map(raw_freq, phase, amp, off, delta, 5, 5)
            want = scalar_broadcast_map(raw_freq, phase, amp, off, delta, 5, 5)
            assert (got - want).abs().max() < 1e-6

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError, match="invalid-shape"):
            compute_broadcast_map(
                torch.zeros(2), torch.tensor(0.0), torch.tensor(1.0),
                torch.tensor(0.0), torch.tensor(0.0), 0, 4,
            )

    def test_amplitude_bound(self, rng):
        for _ in range(20):
            amp = torch.randn((), generator=rng)
            off = torch.randn((), generator=rng)
            bm = compute_broadcast_map(
                torch.randn(2, generator=rng), torch.randn((), generator=rng),
                amp, off, torch.rand((), generator=rng) * TWO_PI, 6, 7,
            )
            assert bm.min() >= off - amp.abs() - 1e-5
            assert bm.max() <= off + amp.abs() + 1e-5

    def test_resolution_extension_is_exact(self, rng):
        raw_freq = torch.randn(2, generator=rng)
        args = (raw_freq, torch.randn((), generator=rng),
                torch.randn((), generator=rng), torch.randn((), generator=rng),
                torch.rand((), generator=rng) * TWO_PI)
        small = compute_broadcast_map(*args, 5, 6)
        big = compute_broadcast_map(*args, 13, 11)
        assert torch.equal(big[:5, :6], small)


class TestSamplePhase:
    def test_in_range_and_deterministic(self):
        a = sample_phase(torch.Generator().manual_seed(7))
        b = sample_phase(torch.Generator().manual_seed(7))
        assert 0.0 <= a.item() < TWO_PI
        assert a.item() == b.item()

    def test_fixed_phase_is_zero(self, rng):
        for _ in range(5):
            assert sample_phase(rng, fixed_phase=True).item() == 0.0

    def test_mean_approaches_pi(self, rng):
        n = 100_000
        samples = torch.stack([sample_phase(rng) for _ in range(n)])
        stderr = TWO_PI / math.sqrt(12 * n)
        assert abs(samples.mean().item() - math.pi) < 3 * stderr


class TestTBForward:
    def test_unit_texton_passes_map_through(self, rng):
        bank = random_bank(rng, 1, 3)
        with torch.no_grad():
            bank.textons.fill_(1.0)
        delta = torch.tensor(0.7, dtype=torch.float64)
        out = bank(delta, 4, 4)
        bm = bank.broadcast_maps(delta, 4, 4)[0]
        for c in range(3):
            assert torch.allclose(out[c], bm)

    def test_zero_textons_give_zero(self, rng):
        bank = random_bank(rng, 3, 2)
        with torch.no_grad():
            bank.textons.zero_()
        out = bank(torch.tensor(1.0), 5, 5)
        assert out.abs().max() == 0.0

    def test_matches_triple_loop_oracle(self, rng):
        bank = random_bank(rng, 2, 4)
        delta = torch.rand((), generator=rng, dtype=torch.float64) * TWO_PI
        got = bank(delta, 3, 3)
        want = scalar_tb_forward(bank, delta, 3, 3)
        assert (got - want).abs().max() < 1e-6
        assert got.shape == (4, 3, 3)

    def test_phase_periodicity(self, rng):
        bank = random_bank(rng, 3, 5)
        delta = torch.rand((), generator=rng, dtype=torch.float64) * TWO_PI
        a = bank(delta, 6, 6)
        b = bank(delta + TWO_PI, 6, 6)
        assert (a - b).abs().max() < 1e-6

    def test_linearity_in_textons(self, rng):
        bank = random_bank(rng, 2, 3)
        u = torch.randn(2, 3, generator=rng, dtype=torch.float64)
        v = bank.textons.detach().clone()
        delta = torch.tensor(0.9, dtype=torch.float64)
        out_v = bank(delta, 4, 4)
        with torch.no_grad():
            bank.textons.copy_(u)
        out_u = bank(delta, 4, 4)
        with torch.no_grad():
            bank.textons.copy_(2.0 * v - 3.0 * u)
        combined = bank(delta, 4, 4)
        assert (combined - (2.0 * out_v - 3.0 * out_u)).abs().max() < 1e-6

    def test_rejects_bad_cond_shape(self, rng):
        bank = random_bank(rng, 2, 3)
        with pytest.raises(ValueError, match="invalid-bank"):
            bank(torch.tensor(0.0), 4, 4, cond=torch.zeros(3, 5, dtype=torch.float64))


def finite_difference_grads(bank, delta, H, W, probe, eps=1e-4):
    """Central differences of sum(probe * forward) w.r.t. every parameter."""
    grads = {}
    for name, param in bank.named_parameters():
        g = torch.zeros_like(param)
        flat = param.data.view(-1)
        for j in range(flat.numel()):
            orig = flat[j].item()
            flat[j] = orig + eps
            hi = (bank(delta, H, W) * probe).sum().item()
            flat[j] = orig - eps
            lo = (bank(delta, H, W) * probe).sum().item()
            flat[j] = orig
            g.view(-1)[j] = (hi - lo) / (2 * eps)
        grads[name] = g
    return grads


class TestGradients:
    def test_analytic_matches_finite_differences(self, rng):
        for trial in range(5):
            P, C, H, W = 2, 3, 4, 5
            bank = random_bank(rng, P, C)
            delta = torch.rand((), generator=rng, dtype=torch.float64) * TWO_PI
            probe = torch.randn(C, H, W, generator=rng, dtype=torch.float64)
            loss = (bank(delta, H, W) * probe).sum()
            loss.backward()
            fd = finite_difference_grads(bank, delta, H, W, probe)
            for name, param in bank.named_parameters():
                num = fd[name]
                denom = num.abs().clamp_min(1e-3)
                rel = ((param.grad - num).abs() / denom).max().item()
                assert rel < 1e-4, f"{name}: rel err {rel}"
