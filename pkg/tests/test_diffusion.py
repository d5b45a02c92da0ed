import math

import pytest
import torch

from tripletswap.analysis.codec import LatentCodec
from tripletswap.analysis.diffusion import (
    NoiseSchedule,
    add_noise,
    diffusion_loss,
    id_loss_from_embeddings,
    k_step_sample,
    make_schedule,
    one_step_sample,
    predicted_x0,
    rec_loss,
    sampler_timesteps,
)
from tripletswap.analysis.render import render
from tripletswap.domain.errors import ConfigValidationError, NumericError
from tripletswap.domain.factors import sample_factors
from tripletswap.domain.losses import LossWeights, total_loss


def _quarter_schedule() -> NoiseSchedule:
    # alpha_bar_0 = 0.25
    return NoiseSchedule.from_betas(torch.tensor([0.75], dtype=torch.float64))


class TrueEpsModel:
    """Denoiser that knows the clean latent and returns the exact noise."""

    def __init__(self, z0: torch.Tensor, schedule: NoiseSchedule) -> None:
        self.z0 = z0
        self.schedule = schedule

    def predict(self, z_t, condition, t):
        ab = self.schedule.alpha_bars[t]
        eps = (z_t - ab.sqrt() * self.z0) / (1.0 - ab).sqrt()
        return eps, self.z0


class ZeroEpsModel:
    def __init__(self, schedule: NoiseSchedule) -> None:
        self.schedule = schedule

    def predict(self, z_t, condition, t):
        eps = torch.zeros_like(z_t)
        return eps, predicted_x0(z_t, eps, t, self.schedule)


# ----------------------------
# Schedule
# ----------------------------

def test_default_schedule_end_values():
    s = make_schedule(1000, 1e-4, 2e-2)
    assert s.T == 1000
    assert s.alpha_bar(999) == pytest.approx(4.0e-5, rel=0.05)
    assert 0.0 < s.alpha_bar(999) < 0.01
    assert s.alpha_bar(0) == pytest.approx(1 - 1e-4)
    assert bool((s.alpha_bars[1:] < s.alpha_bars[:-1]).all())
    assert bool((s.betas[1:] > s.betas[:-1]).all())


def test_single_step_schedule():
    s = make_schedule(1, 1e-3, 2e-2)
    assert s.alpha_bar(0) == pytest.approx(1 - 1e-3)


@pytest.mark.parametrize("T,lo,hi", [(0, 1e-4, 2e-2), (10, 2e-2, 1e-4), (10, 0.0, 0.5), (10, 0.1, 1.0)])
def test_invalid_schedule_bounds(T, lo, hi):
    with pytest.raises(ConfigValidationError):
        make_schedule(T, lo, hi)


# ----------------------------
# Forward process
# ----------------------------

def test_add_noise_direct_evaluation():
    s = _quarter_schedule()
    out = add_noise(torch.tensor([1.0, 0.0], dtype=torch.float64), torch.tensor([0.0, 2.0], dtype=torch.float64), 0, s)
    assert out.tolist() == pytest.approx([0.5, 1.7320508], abs=1e-7)


def test_add_noise_rejects_bad_timestep_and_shape():
    s = make_schedule(10)
    z = torch.zeros(4)
    with pytest.raises(ConfigValidationError):
        add_noise(z, z, 10, s)
    with pytest.raises(ConfigValidationError):
        add_noise(z, torch.zeros(5), 0, s)


def test_add_noise_preserves_unit_variance():
    s = make_schedule()
    gen = torch.Generator().manual_seed(0)
    z0 = torch.randn(100_000, generator=gen, dtype=torch.float64)
    eps = torch.randn(100_000, generator=gen, dtype=torch.float64)
    for t in (0, 500, 999):
        assert float(add_noise(z0, eps, t, s).var()) == pytest.approx(1.0, rel=0.02)


def test_predicted_x0_inverts_add_noise():
    s = make_schedule()
    gen = torch.Generator().manual_seed(1)
    z0 = torch.randn(48, 16, 16, generator=gen, dtype=torch.float64)
    eps = torch.randn(48, 16, 16, generator=gen, dtype=torch.float64)
    for t in (0, 250, 999):
        rec = predicted_x0(add_noise(z0, eps, t, s), eps, t, s)
        assert float((rec - z0).norm() / z0.norm()) < 1e-5


def test_predicted_x0_with_zero_eps_and_error_amplification():
    s = _quarter_schedule()
    z_t = torch.tensor([1.0, -2.0], dtype=torch.float64)
    assert predicted_x0(z_t, torch.zeros(2, dtype=torch.float64), 0, s).tolist() == pytest.approx([2.0, -4.0])

    delta = torch.tensor([0.1, 0.1], dtype=torch.float64)
    shift = predicted_x0(z_t, delta, 0, s) - predicted_x0(z_t, torch.zeros(2, dtype=torch.float64), 0, s)
    expected = -0.1 * math.sqrt(0.75) / math.sqrt(0.25)
    assert shift.tolist() == pytest.approx([expected, expected])


def test_predicted_x0_below_floor_is_numeric_error():
    s = NoiseSchedule.from_betas(torch.full((40,), 0.5, dtype=torch.float64))
    with pytest.raises(NumericError):
        predicted_x0(torch.zeros(2), torch.zeros(2), 39, s)


# ----------------------------
# Samplers
# ----------------------------

def test_sampler_timesteps():
    s = make_schedule()
    assert sampler_timesteps(s, 1) == [999]
    assert sampler_timesteps(s, 4) == [999, 749, 499, 249]
    with pytest.raises(ConfigValidationError):
        sampler_timesteps(s, 2)


def test_k4_with_true_eps_recovers_clean_latent():
    s = make_schedule()
    codec = LatentCodec()
    z0 = codec.encode(render(sample_factors(0)).double().unsqueeze(0))
    noise = torch.randn(z0.shape, generator=torch.Generator().manual_seed(3), dtype=torch.float64)
    out = k_step_sample(TrueEpsModel(z0, s), None, noise, s, 4, codec)
    expected = codec.decode(z0).clamp(0.0, 1.0)
    assert float((out - expected).norm() / expected.norm()) < 1e-4


def test_one_step_equals_k1_and_is_deterministic():
    s = make_schedule()
    model = ZeroEpsModel(s)
    noise = torch.randn(2, 48, 16, 16, generator=torch.Generator().manual_seed(4))
    a = one_step_sample(model, None, noise, s)
    assert torch.equal(a, k_step_sample(model, None, noise, s, 1))
    assert torch.equal(a, one_step_sample(model, None, noise, s))
    assert a.shape == (2, 3, 64, 64)


# ----------------------------
# Codec
# ----------------------------

def test_codec_round_trip_is_exact():
    codec = LatentCodec()
    images = torch.stack([render(sample_factors(s)) for s in range(4)]).double()
    z = codec.encode(images)
    assert z.shape == (4, 48, 16, 16)
    assert torch.equal(codec.decode(z), images)
    assert torch.equal(codec.decode(codec.encode(images[0])), images[0])
    assert codec.latent_shape(64) == (48, 16, 16)


# ----------------------------
# Losses
# ----------------------------

def test_diffusion_and_rec_losses():
    ones = torch.ones(3, 8, 8)
    zeros = torch.zeros(3, 8, 8)
    assert float(diffusion_loss(ones, ones)) == 0.0
    assert float(diffusion_loss(zeros, ones)) == 1.0
    a, b = torch.rand(10), torch.rand(10)
    assert float(diffusion_loss(a, b)) == pytest.approx(float(diffusion_loss(b, a)))
    assert float(rec_loss(zeros, ones)) == 1.0
    assert float(rec_loss(a, a + 0.3)) == pytest.approx(0.09, abs=1e-6)


def test_id_loss_from_embeddings_values():
    e = torch.tensor([[1.0, 0.0]])
    assert float(id_loss_from_embeddings(e, e)) == pytest.approx(0.0, abs=1e-6)
    assert float(id_loss_from_embeddings(e, torch.tensor([[0.0, 3.0]]))) == pytest.approx(1.0)
    assert float(id_loss_from_embeddings(e, torch.tensor([[-2.0, 0.0]]))) == pytest.approx(2.0)
    with pytest.raises(NumericError):
        id_loss_from_embeddings(torch.zeros(1, 2), e)


def test_total_loss_weighting():
    out = total_loss(0.2, 0.5, 0.03)
    assert out.total == pytest.approx(1.0)
    assert total_loss(0.0, 0.0, 0.0).total == 0.0
    zero = LossWeights(lambda_id=0.0, lambda_dm=0.0, lambda_rec=0.0)
    assert total_loss(3.0, 4.0, 5.0, zero).total == 0.0
