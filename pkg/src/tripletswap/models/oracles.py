# src/tripletswap/models/oracles.py
"""
Oracle encoders: small CNNs regressing the generative factors from pixels.

Both networks use strided convolutions with SiLU (no pooling) so they are
smooth in their input. The identity encoder regresses identity factors
normalised to [-1, 1]; that vector is the identity embedding. The attribute
regressor predicts the 9 attributes with lighting direction as (cos, sin).
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch
import torch.nn as nn

from tripletswap.adapters.checkpoint_io import (
    load_container,
    prefixed,
    save_container,
    strip_prefix,
    tensor_digest,
)
from tripletswap.domain.errors import CheckpointError
from tripletswap.domain.factors import (
    LIGHTING_DIRECTION,
    N_ATTRIBUTES,
    N_IDENTITY,
    TWO_PI,
    denormalize_attributes,
    denormalize_identity,
    normalize_attributes,
)

# attribute head layout: 8 normalised attributes + (cos, sin) of lighting direction
N_ATTRIBUTE_OUTPUTS = N_ATTRIBUTES + 1


class ConvRegressor(nn.Module):
    def __init__(self, out_dim: int, width: int = 32, resolution: int = 64) -> None:
        super().__init__()
        w = width
        self.features = nn.Sequential(
            nn.Conv2d(3, w, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(w, w, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(w, 2 * w, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * w, 2 * w, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(2 * w, 4 * w, 4, stride=2, padding=1),
            nn.SiLU(),
        )
        side = resolution // 16
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(4 * w * side * side, 128),
            nn.SiLU(),
            nn.Linear(128, out_dim),
        )

    def forward(self, images: torch.Tensor) -> torch.Tensor:
        return self.head(self.features(images))


class IdentityEncoder(ConvRegressor):
    def __init__(self, width: int = 32, resolution: int = 64) -> None:
        super().__init__(N_IDENTITY, width, resolution)


class AttributeRegressor(ConvRegressor):
    def __init__(self, width: int = 32, resolution: int = 64) -> None:
        super().__init__(N_ATTRIBUTE_OUTPUTS, width, resolution)


def attributes_to_targets(attributes: np.ndarray) -> np.ndarray:
    """[N, 9] factor units -> [N, 10] regression targets."""
    a = np.atleast_2d(np.asarray(attributes, dtype=np.float64))
    unit = normalize_attributes(a)
    direction = a[:, LIGHTING_DIRECTION]
    rest = np.delete(unit, LIGHTING_DIRECTION, axis=1)
    return np.concatenate([rest, np.cos(direction)[:, None], np.sin(direction)[:, None]], axis=1)


def outputs_to_attributes(outputs: np.ndarray) -> np.ndarray:
    """[N, 10] regressor outputs -> [N, 9] factor units (direction in [0, 2pi))."""
    o = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    rest = o[:, : N_ATTRIBUTES - 1]
    direction = np.mod(np.arctan2(o[:, -1], o[:, -2]), TWO_PI)
    unit = np.insert(rest, LIGHTING_DIRECTION, 0.0, axis=1)
    attrs = denormalize_attributes(unit)
    attrs[:, LIGHTING_DIRECTION] = direction
    return attrs


@dataclass
class OracleMetadata:
    val_rmse: dict[str, float] = field(default_factory=dict)
    decision_threshold: float = 0.5
    separation_overlap: float = float("nan")
    same_identity_mean: float = float("nan")
    different_identity_mean: float = float("nan")
    n_train: int = 0
    epochs: int = 0
    width: int = 32
    resolution: int = 64

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class OracleEncoders:
    """Frozen identity encoder + attribute regressor pair."""

    def __init__(
        self,
        identity: IdentityEncoder,
        attributes: AttributeRegressor,
        metadata: OracleMetadata | None = None,
    ) -> None:
        self.identity = identity
        self.attributes = attributes
        self.metadata = metadata or OracleMetadata()

    def freeze(self) -> OracleEncoders:
        for module in (self.identity, self.attributes):
            module.eval()
            for p in module.parameters():
                p.requires_grad_(False)
        return self

    def to(self, *args: Any, **kwargs: Any) -> OracleEncoders:
        """Device and/or dtype move, as `nn.Module.to`."""
        self.identity.to(*args, **kwargs)
        self.attributes.to(*args, **kwargs)
        return self

    def parameter_hash(self) -> str:
        return tensor_digest(
            {**prefixed("identity", self.identity.state_dict()), **prefixed("attributes", self.attributes.state_dict())}
        )

    def embed(self, images: torch.Tensor) -> torch.Tensor:
        """Identity embedding; differentiable w.r.t. `images`."""
        x = images.unsqueeze(0) if images.dim() == 3 else images
        return self.identity(x)

    __call__ = embed

    @torch.no_grad()
    def estimate_identity(self, images: torch.Tensor) -> np.ndarray:
        emb = self.embed(images).detach().cpu().double().numpy()
        return denormalize_identity(emb)

    @torch.no_grad()
    def estimate_attributes(self, images: torch.Tensor) -> np.ndarray:
        x = images.unsqueeze(0) if images.dim() == 3 else images
        return outputs_to_attributes(self.attributes(x).detach().cpu().double().numpy())

    @torch.no_grad()
    def features(self, images: torch.Tensor) -> np.ndarray:
        """17-dim feature used by the Fréchet distance: identity + attributes."""
        return np.concatenate([self.estimate_identity(images), self.estimate_attributes(images)], axis=1)

    def save(self, path: str | Path) -> Path:
        tensors = {
            **prefixed("identity", self.identity.state_dict()),
            **prefixed("attributes", self.attributes.state_dict()),
        }
        header = {"kind": "oracles", "oracle_hash": self.parameter_hash(), "metadata": self.metadata.to_dict()}
        return save_container(path, tensors, header)

    @classmethod
    def load(cls, path: str | Path) -> OracleEncoders:
        tensors, meta = load_container(path)
        if meta.get("kind") != "oracles":
            raise CheckpointError(f"{path} is not an oracle checkpoint", path=str(path), kind=meta.get("kind"))
        raw = json.loads(meta.get("metadata", "{}"))
        md = OracleMetadata(**raw)
        identity = IdentityEncoder(md.width, md.resolution)
        attributes = AttributeRegressor(md.width, md.resolution)
        identity.load_state_dict(strip_prefix("identity", tensors))
        attributes.load_state_dict(strip_prefix("attributes", tensors))
        enc = cls(identity, attributes, md).freeze()
        if enc.parameter_hash() != meta.get("oracle_hash"):
            raise CheckpointError("oracle parameter hash mismatch", path=str(path))
        return enc


def build_oracles(width: int = 32, resolution: int = 64, seed: int = 0) -> OracleEncoders:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        identity = IdentityEncoder(width, resolution)
        attributes = AttributeRegressor(width, resolution)
    return OracleEncoders(identity, attributes, OracleMetadata(width=width, resolution=resolution))


def circular_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)

