# src/tripletswap/adapters/proxy_degraded.py
"""
Controllably degraded proxies.

attr_noisy: exact identity, Gaussian noise on the target attributes
            (sigma in units of each interval's width). Lighting direction
            wraps, the glasses flag is never perturbed.
id_weak:    exact attributes, identity blended toward the target.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch

from tripletswap.adapters.proxy_oracle import OracleProxy
from tripletswap.analysis.render import render
from tripletswap.domain.errors import ConfigValidationError
from tripletswap.domain.factors import (
    GLASSES_FLAG,
    FactorVector,
    attribute_widths,
    clip_attributes,
    clip_identity,
)
from tripletswap.domain.ports import ProxySwapper
from tripletswap.domain.run_config import ProxyConfig
from tripletswap.domain.seeds import derive_seed, numpy_rng

DEGRADED_PRESETS = ("attr_noisy", "id_weak")


@dataclass(frozen=True)
class AttrNoisyProxy:
    sigma: float = 0.08
    name: str = "attr_noisy"
    identity_fidelity: float = 1.0

    @property
    def attribute_fidelity(self) -> float:
        return 1.0 - self.sigma

    def swap_factors(self, source: FactorVector, target: FactorVector, seed: int = 0) -> FactorVector:
        rng = numpy_rng(derive_seed(seed, "attr_noise"))
        attrs = target.attribute_array()
        noise = rng.normal(0.0, self.sigma, size=attrs.shape) * attribute_widths()
        noise[GLASSES_FLAG] = 0.0
        noisy = clip_attributes(attrs + noise)
        return FactorVector(identity=source.identity, attributes=tuple(noisy))

    def swap(self, source: FactorVector, target: FactorVector, seed: int = 0) -> torch.Tensor:
        return render(self.swap_factors(source, target, seed))


@dataclass(frozen=True)
class IdWeakProxy:
    blend: float = 0.85
    name: str = "id_weak"
    attribute_fidelity: float = 1.0

    @property
    def identity_fidelity(self) -> float:
        return self.blend

    def swap_factors(self, source: FactorVector, target: FactorVector, seed: int = 0) -> FactorVector:
        mixed = self.blend * source.identity_array() + (1.0 - self.blend) * target.identity_array()
        # equal vectors must come back bit-exact
        if source.identity == target.identity:
            mixed = source.identity_array()
        return FactorVector(identity=tuple(clip_identity(mixed)), attributes=target.attributes)

    def swap(self, source: FactorVector, target: FactorVector, seed: int = 0) -> torch.Tensor:
        return render(self.swap_factors(source, target, seed))


def degraded_proxy_swap(
    source: FactorVector,
    target: FactorVector,
    preset: str,
    seed: int = 0,
    config: ProxyConfig | None = None,
) -> torch.Tensor:
    cfg = config or ProxyConfig()
    if preset == "attr_noisy":
        return AttrNoisyProxy(sigma=cfg.sigma).swap(source, target, seed)
    if preset == "id_weak":
        return IdWeakProxy(blend=cfg.blend).swap(source, target, seed)
    raise ConfigValidationError(f"unknown degraded proxy preset {preset!r}", preset=preset, allowed=list(DEGRADED_PRESETS))


def make_proxy(config: ProxyConfig) -> ProxySwapper:
    if config.name == "oracle":
        return OracleProxy()
    if config.name == "attr_noisy":
        return AttrNoisyProxy(sigma=config.sigma)
    if config.name == "id_weak":
        return IdWeakProxy(blend=config.blend)
    raise ConfigValidationError(f"unknown proxy {config.name!r}", proxy=config.name)
