# src/tripletswap/analysis/codec.py
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LatentCodec:
    """
    Lossless latent codec: space-to-depth with block `block` followed by a
    per-channel affine map (x - shift) * scale.

    With block=4 a [3, 64, 64] image becomes a [48, 16, 16] latent. `scale` is
    a power of two, so the round trip is exact whenever `x - shift` is
    representable (always for float32 images held in float64).
    """

    block: int = 4
    shift: float = 0.5
    scale: float = 4.0
    image_channels: int = 3

    @property
    def latent_channels(self) -> int:
        return self.image_channels * self.block * self.block

    def latent_shape(self, resolution: int) -> tuple[int, int, int]:
        side = resolution // self.block
        return (self.latent_channels, side, side)

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """[3,H,W] or [B,3,H,W] -> [C_lat,H/b,W/b] or [B,C_lat,H/b,W/b]."""
        single = images.dim() == 3
        x = images.unsqueeze(0) if single else images
        z = (F.pixel_unshuffle(x, self.block) - self.shift) * self.scale
        return z.squeeze(0) if single else z

    def decode(self, latents: torch.Tensor) -> torch.Tensor:
        """Inverse of `encode`. Not clamped; callers clamp what they return."""
        single = latents.dim() == 3
        z = latents.unsqueeze(0) if single else latents
        x = F.pixel_shuffle(z / self.scale + self.shift, self.block)
        return x.squeeze(0) if single else x

    def to_record(self) -> dict[str, float | int]:
        return {"block": self.block, "shift": self.shift, "scale": self.scale, "image_channels": self.image_channels}
