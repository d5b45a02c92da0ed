# src/tripletswap/domain/losses.py
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

from pydantic import BaseModel, ConfigDict, Field

from tripletswap.domain.errors import NumericError


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda_id: float = Field(default=1.0, ge=0.0)
    lambda_dm: float = Field(default=1.0, ge=0.0)
    lambda_rec: float = Field(default=10.0, ge=0.0)


@dataclass(frozen=True)
class LossBreakdown:
    l_dm: float
    l_id: float
    l_rec: float
    total: float

    def to_dict(self) -> dict[str, float]:
        return asdict(self)


def total_loss(l_dm: float, l_id: float, l_rec: float, weights: LossWeights | None = None) -> LossBreakdown:
    w = weights or LossWeights()
    parts = {"l_dm": float(l_dm), "l_id": float(l_id), "l_rec": float(l_rec)}
    bad = {k: v for k, v in parts.items() if not math.isfinite(v)}
    if bad:
        raise NumericError("non-finite loss component", **bad)
    total = w.lambda_id * parts["l_id"] + w.lambda_dm * parts["l_dm"] + w.lambda_rec * parts["l_rec"]
    return LossBreakdown(total=total, **parts)
