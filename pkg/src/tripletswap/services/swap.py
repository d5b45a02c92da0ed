# src/tripletswap/services/swap.py
"""
Inference path y = F(x_src, x_tar).

Coefficients of both images come from the frozen oracles, the landmark image
is rendered from recombine(source, target) and the swap is a k-step sample
from seeded noise.
"""
from __future__ import annotations

from pathlib import Path

import torch

from tripletswap.adapters.config import config
from tripletswap.adapters.logging_utils import get_logger
from tripletswap.analysis.codec import LatentCodec
from tripletswap.analysis.diffusion import k_step_sample, sampler_timesteps
from tripletswap.analysis.landmarks import render_landmarks
from tripletswap.domain.coefficients import CoefficientSet, coefficients_from_estimates, recombine
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.seeds import derive_seed, torch_generator
from tripletswap.models.oracles import OracleEncoders
from tripletswap.models.swapnet import ConditionBundle, SwapModel
from tripletswap.services.trainer import load_swap_model

logger = get_logger(__name__)


def _batched(images: torch.Tensor) -> torch.Tensor:
    return images.unsqueeze(0) if images.dim() == 3 else images


def estimate_coefficients(images: torch.Tensor, oracles: OracleEncoders) -> list[CoefficientSet]:
    x = _batched(images)
    ids = oracles.estimate_identity(x)
    attrs = oracles.estimate_attributes(x)
    return [coefficients_from_estimates(i, a) for i, a in zip(ids, attrs)]


class Swapper:
    def __init__(
        self,
        model: SwapModel,
        oracles: OracleEncoders,
        codec: LatentCodec | None = None,
        device: str | None = None,
    ) -> None:
        self.device = device or config.DEVICE
        self.model = model.to(self.device).eval()
        self.oracles = oracles.freeze().to(self.device)
        self.codec = codec or LatentCodec()

    @classmethod
    def from_checkpoint(cls, path: str | Path, oracles: OracleEncoders, device: str | None = None) -> Swapper:
        model, codec, bundle = load_swap_model(path, device)
        if bundle.step == 0:
            logger.warning("untrained_checkpoint", extra={"context": {"path": str(path)}})
        if bundle.oracle_hash and bundle.oracle_hash != oracles.parameter_hash():
            logger.warning(
                "oracle_hash_mismatch",
                extra={"context": {"path": str(path), "expected": bundle.oracle_hash, "actual": oracles.parameter_hash()}},
            )
        return cls(model, oracles, codec, device)

    @property
    def resolution(self) -> int:
        return self.model.config.resolution

    @torch.no_grad()
    def condition(self, sources: torch.Tensor, targets: torch.Tensor) -> ConditionBundle:
        src = _batched(sources).to(self.device)
        tar = _batched(targets).to(self.device)
        if src.shape != tar.shape:
            raise ConfigValidationError("source and target batches differ", source=tuple(src.shape), target=tuple(tar.shape))
        landmarks = torch.stack(
            [
                render_landmarks(recombine(s, t), self.resolution)
                for s, t in zip(estimate_coefficients(src, self.oracles), estimate_coefficients(tar, self.oracles))
            ]
        ).to(self.device, src.dtype)
        return ConditionBundle(
            target_latent=self.codec.encode(tar),
            landmark_image=landmarks,
            source_latent=self.codec.encode(src),
            id_embedding=self.oracles.embed(src),
        )

    def noise(self, n: int, seed: int, offset: int = 0) -> torch.Tensor:
        """Per-pair noise, so a pair's output does not depend on its batch."""
        shape = self.codec.latent_shape(self.resolution)
        return torch.stack(
            [torch.randn(shape, generator=torch_generator(derive_seed(seed, "swap_noise", offset + i))) for i in range(n)]
        ).to(self.device)

    def swap_batch(self, sources: torch.Tensor, targets: torch.Tensor, k: int = 1, seed: int = 0, offset: int = 0) -> torch.Tensor:
        sampler_timesteps(self.model.schedule, k)
        cond = self.condition(sources, targets)
        noise = self.noise(cond.target_latent.shape[0], seed, offset).to(cond.target_latent.dtype)
        return k_step_sample(self.model, cond, noise, self.model.schedule, k, self.codec)


def swap(
    source_image: torch.Tensor,
    target_image: torch.Tensor,
    checkpoint: str | Path | Swapper,
    k: int = 1,
    oracles: OracleEncoders | None = None,
    seed: int = 0,
) -> torch.Tensor:
    """Swapped image [3,H,W] (or [B,3,H,W] for batched input) in [0,1]."""
    if isinstance(checkpoint, Swapper):
        swapper = checkpoint
    else:
        if oracles is None:
            raise ConfigValidationError("oracle encoders are required to swap from a checkpoint path")
        swapper = Swapper.from_checkpoint(checkpoint, oracles)
    out = swapper.swap_batch(source_image, target_image, k, seed)
    return out.squeeze(0) if source_image.dim() == 3 else out
