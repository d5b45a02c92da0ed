# src/tripletswap/analysis/diffusion.py
"""
Diffusion algebra: linear beta schedule, forward noising, x0/eps conversions,
one-step and deterministic k-step samplers, and the three training losses.

Schedule tensors are float64; conversions cast coefficients to the dtype of
the latent they act on.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import torch
import torch.nn.functional as F

from tripletswap.analysis.codec import LatentCodec
from tripletswap.domain.errors import ConfigValidationError, NumericError
from tripletswap.domain.ports import Denoiser, IdentityEmbedder

ALPHA_BAR_FLOOR = 1e-8
SUPPORTED_SAMPLER_STEPS = (1, 4)


@dataclass(frozen=True)
class NoiseSchedule:
    betas: torch.Tensor
    alpha_bars: torch.Tensor

    @property
    def T(self) -> int:
        return int(self.betas.shape[0])

    @classmethod
    def from_betas(cls, betas: torch.Tensor) -> NoiseSchedule:
        b = betas.to(torch.float64)
        return cls(betas=b, alpha_bars=torch.cumprod(1.0 - b, dim=0))

    def alpha_bar(self, t: int) -> float:
        check_timestep(t, self)
        return float(self.alpha_bars[t])

    def to_tensors(self) -> dict[str, torch.Tensor]:
        return {"betas": self.betas.clone(), "alpha_bars": self.alpha_bars.clone()}


def make_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise ConfigValidationError("T must be >= 1", T=T)
    if not (0.0 < beta_min < beta_max < 1.0):
        raise ConfigValidationError(
            "schedule bounds must satisfy 0 < beta_min < beta_max < 1",
            beta_min=beta_min,
            beta_max=beta_max,
        )
    if T == 1:
        betas = torch.tensor([beta_min], dtype=torch.float64)
    else:
        betas = torch.linspace(beta_min, beta_max, T, dtype=torch.float64)
    return NoiseSchedule.from_betas(betas)


def check_timestep(t: int, schedule: NoiseSchedule) -> None:
    if not (0 <= int(t) < schedule.T):
        raise ConfigValidationError(f"timestep {t} outside [0, {schedule.T})", t=int(t), T=schedule.T)


def _coeffs(t: int, schedule: NoiseSchedule, like: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    check_timestep(t, schedule)
    ab = schedule.alpha_bars[t]
    return ab.sqrt().to(like.dtype), (1.0 - ab).sqrt().to(like.dtype)


def add_noise(z0: torch.Tensor, eps: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    if z0.shape != eps.shape:
        raise ConfigValidationError("z0 and eps shapes differ", z0=tuple(z0.shape), eps=tuple(eps.shape))
    sa, sb = _coeffs(t, schedule, z0)
    return sa * z0 + sb * eps


def predicted_x0(z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    check_timestep(t, schedule)
    ab = float(schedule.alpha_bars[t])
    if ab < ALPHA_BAR_FLOOR:
        raise NumericError("alpha_bar below safe floor", t=int(t), alpha_bar=ab, floor=ALPHA_BAR_FLOOR)
    sa, sb = _coeffs(t, schedule, z_t)
    return (z_t - sb * eps_hat) / sa


def eps_from_x0(z_t: torch.Tensor, x0_hat: torch.Tensor, t: int, schedule: NoiseSchedule) -> torch.Tensor:
    sa, sb = _coeffs(t, schedule, z_t)
    if float(sb) == 0.0:
        raise NumericError("1 - alpha_bar is zero; eps undefined", t=int(t))
    return (z_t - sa * x0_hat) / sb


def sampler_timesteps(schedule: NoiseSchedule, k: int) -> list[int]:
    """Evenly spaced from T-1 downwards: k=4, T=1000 -> [999, 749, 499, 249]."""
    if k not in SUPPORTED_SAMPLER_STEPS:
        raise ConfigValidationError(f"unsupported sampler steps k={k}", k=k, supported=list(SUPPORTED_SAMPLER_STEPS))
    stride = schedule.T // k
    return [schedule.T - 1 - i * stride for i in range(k)]


def sample_latent(
    model: Denoiser,
    condition: Any,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
    timesteps: list[int],
) -> torch.Tensor:
    """Deterministic sampler over `timesteps`; returns the final x0 estimate."""
    t0 = timesteps[0]
    z = add_noise(torch.zeros_like(noise), noise, t0, schedule)
    x0_hat = z
    for i, t in enumerate(timesteps):
        eps_hat, x0_hat = model.predict(z, condition, t)
        if not torch.isfinite(x0_hat).all():
            raise NumericError("non-finite x0 estimate during sampling", t=int(t), step=i)
        if i + 1 < len(timesteps):
            z = add_noise(x0_hat, eps_hat, timesteps[i + 1], schedule)
    return x0_hat


def k_step_sample(
    model: Denoiser,
    condition: Any,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
    k: int,
    codec: LatentCodec | None = None,
) -> torch.Tensor:
    codec = codec or LatentCodec()
    with torch.no_grad():
        x0 = sample_latent(model, condition, noise, schedule, sampler_timesteps(schedule, k))
    return codec.decode(x0).clamp(0.0, 1.0)


def one_step_sample(
    model: Denoiser,
    condition: Any,
    noise: torch.Tensor,
    schedule: NoiseSchedule,
    codec: LatentCodec | None = None,
) -> torch.Tensor:
    return k_step_sample(model, condition, noise, schedule, 1, codec)


# ----------------------------
# Losses
# ----------------------------

def diffusion_loss(eps_true: torch.Tensor, eps_hat: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(eps_hat, eps_true)


def rec_loss(generated: torch.Tensor, ground_truth: torch.Tensor) -> torch.Tensor:
    return F.mse_loss(generated, ground_truth)


def id_loss(
    generated: torch.Tensor,
    source: torch.Tensor,
    encoder: IdentityEmbedder,
    eps: float = 1e-12,
) -> torch.Tensor:
    """Mean of 1 - cos(e_source, e_generated); gradients flow into `generated` only."""
    gen = generated.unsqueeze(0) if generated.dim() == 3 else generated
    src = source.unsqueeze(0) if source.dim() == 3 else source
    e_gen = encoder(gen)
    with torch.no_grad():
        e_src = encoder(src)
    return id_loss_from_embeddings(e_gen, e_src, eps)


def id_loss_from_embeddings(e_gen: torch.Tensor, e_src: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    n_gen = e_gen.norm(dim=-1)
    n_src = e_src.norm(dim=-1)
    if bool((n_gen < eps).any()) or bool((n_src < eps).any()):
        raise NumericError(
            "zero-norm identity embedding",
            min_generated_norm=float(n_gen.min()),
            min_source_norm=float(n_src.min()),
        )
    cos = (e_gen * e_src).sum(dim=-1) / (n_gen * n_src)
    return (1.0 - cos).mean()
