# src/tripletswap/domain/coefficients.py
"""
Coefficient partition used by the landmark pipeline: identity (8), expression
(mouth curvature) and pose (yaw, pitch).
"""
from __future__ import annotations

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from tripletswap.domain.factors import (
    ATTRIBUTE_INTERVALS,
    IDENTITY_INTERVALS,
    MOUTH_CURVATURE,
    N_IDENTITY,
    PITCH,
    YAW,
    FactorVector,
    clip_identity,
    ensure_valid,
)

EXPRESSION_INTERVAL = ATTRIBUTE_INTERVALS[MOUTH_CURVATURE]
POSE_INTERVALS = (ATTRIBUTE_INTERVALS[YAW], ATTRIBUTE_INTERVALS[PITCH])


class CoefficientSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    identity_coeffs: tuple[float, ...]
    expression_coeffs: tuple[float, ...]
    pose_coeffs: tuple[float, ...]

    @field_validator("identity_coeffs", "expression_coeffs", "pose_coeffs", mode="before")
    @classmethod
    def _to_float_tuple(cls, v: Any) -> Any:
        return tuple(float(x) for x in v)

    @model_validator(mode="after")
    def _check_ranges(self) -> CoefficientSet:
        if len(self.identity_coeffs) != N_IDENTITY:
            raise ValueError(f"identity_coeffs must have {N_IDENTITY} values")
        if len(self.expression_coeffs) != 1:
            raise ValueError("expression_coeffs must have 1 value")
        if len(self.pose_coeffs) != 2:
            raise ValueError("pose_coeffs must have 2 values")
        pairs = list(zip(self.identity_coeffs, IDENTITY_INTERVALS))
        pairs += [(self.expression_coeffs[0], EXPRESSION_INTERVAL)]
        pairs += list(zip(self.pose_coeffs, POSE_INTERVALS))
        bad = [f"{iv.name}={v!r}" for v, iv in pairs if not iv.contains(v)]
        if bad:
            raise ValueError("coefficients out of range: " + ", ".join(bad))
        return self

    @property
    def yaw(self) -> float:
        return self.pose_coeffs[0]

    @property
    def pitch(self) -> float:
        return self.pose_coeffs[1]

    @property
    def curvature(self) -> float:
        return self.expression_coeffs[0]


def extract_coefficients(factors: FactorVector) -> CoefficientSet:
    ensure_valid(factors)
    a = factors.attributes
    return CoefficientSet(
        identity_coeffs=factors.identity,
        expression_coeffs=(a[MOUTH_CURVATURE],),
        pose_coeffs=(a[YAW], a[PITCH]),
    )


def recombine(source: CoefficientSet, target: CoefficientSet) -> CoefficientSet:
    """Identity from the source, expression and pose from the target."""
    return CoefficientSet(
        identity_coeffs=source.identity_coeffs,
        expression_coeffs=target.expression_coeffs,
        pose_coeffs=target.pose_coeffs,
    )


def coefficients_from_estimates(identity: np.ndarray, attributes: np.ndarray) -> CoefficientSet:
    """
    Build coefficients from oracle regressor outputs (factor units). Estimates
    can overshoot the intervals slightly, so they are clipped first.
    """
    ident = clip_identity(identity)
    attrs = np.asarray(attributes, dtype=np.float64)

    def _clip(v: float, idx: int) -> float:
        iv = ATTRIBUTE_INTERVALS[idx]
        return float(np.clip(v, iv.lo, iv.hi))

    return CoefficientSet(
        identity_coeffs=tuple(float(x) for x in ident),
        expression_coeffs=(_clip(attrs[MOUTH_CURVATURE], MOUTH_CURVATURE),),
        pose_coeffs=(_clip(attrs[YAW], YAW), _clip(attrs[PITCH], PITCH)),
    )
