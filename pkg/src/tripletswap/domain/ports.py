# src/tripletswap/domain/ports.py
from __future__ import annotations

from typing import Any, Protocol

import torch

from tripletswap.domain.factors import FactorVector


# ----------------------------
# Proxy swappers (pseudo-target generators)
# ----------------------------

class ProxySwapper(Protocol):
    name: str
    attribute_fidelity: float
    identity_fidelity: float

    def swap_factors(self, source: FactorVector, target: FactorVector, seed: int = 0) -> FactorVector:
        """Factors of the swapped face: source identity on target attributes (possibly degraded)."""
        ...

    def swap(self, source: FactorVector, target: FactorVector, seed: int = 0) -> torch.Tensor:
        ...


# ----------------------------
# Denoiser used by the samplers
# ----------------------------

class Denoiser(Protocol):
    def predict(self, z_t: torch.Tensor, condition: Any, t: int) -> tuple[torch.Tensor, torch.Tensor]:
        """Return (eps_hat, x0_hat) for a batch of noisy latents at timestep t."""
        ...


# ----------------------------
# Frozen oracles
# ----------------------------

class IdentityEmbedder(Protocol):
    def __call__(self, images: torch.Tensor) -> torch.Tensor:
        """[B, 3, H, W] -> [B, 8] identity embeddings."""
        ...
