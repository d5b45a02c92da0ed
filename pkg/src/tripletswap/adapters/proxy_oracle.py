# src/tripletswap/adapters/proxy_oracle.py
from __future__ import annotations

from dataclasses import dataclass

import torch

from tripletswap.analysis.render import render
from tripletswap.domain.factors import FactorVector


@dataclass(frozen=True)
class OracleProxy:
    """
    Idealised swapper: source identity factors on target attribute factors.
    Exact attribute preservation and exact identity transfer.
    """

    name: str = "oracle"
    attribute_fidelity: float = 1.0
    identity_fidelity: float = 1.0

    def swap_factors(self, source: FactorVector, target: FactorVector, seed: int = 0) -> FactorVector:
        return FactorVector(identity=source.identity, attributes=target.attributes)

    def swap(self, source: FactorVector, target: FactorVector, seed: int = 0) -> torch.Tensor:
        return render(self.swap_factors(source, target, seed))


def oracle_proxy_swap(source: FactorVector, target: FactorVector) -> torch.Tensor:
    return OracleProxy().swap(source, target)
