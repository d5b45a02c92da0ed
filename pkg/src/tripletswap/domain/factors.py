# src/tripletswap/domain/factors.py
from __future__ import annotations

import math
from typing import Any, NamedTuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from tripletswap.domain.errors import FactorValidationError
from tripletswap.domain.seeds import derive_seed, numpy_rng

TWO_PI = 2.0 * math.pi


class Interval(NamedTuple):
    name: str
    lo: float
    hi: float
    # half-open intervals exclude `hi` (lighting direction)
    closed: bool = True

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, v: float) -> bool:
        if not math.isfinite(v):
            return False
        if self.closed:
            return self.lo <= v <= self.hi
        return self.lo <= v < self.hi


# Lengths are fractions of the image side; hues are HSV hue fractions.
IDENTITY_INTERVALS: tuple[Interval, ...] = (
    Interval("skin_hue", 0.02, 0.12),
    Interval("skin_saturation", 0.25, 0.65),
    Interval("eye_hue", 0.45, 0.75),
    Interval("face_width_ratio", 0.26, 0.36),
    Interval("face_height_ratio", 0.34, 0.44),
    Interval("eye_spacing", 0.08, 0.14),
    Interval("eye_size", 0.03, 0.05),
    Interval("brow_thickness", 0.008, 0.025),
)

ATTRIBUTE_INTERVALS: tuple[Interval, ...] = (
    Interval("background_hue", 0.0, 0.8),
    Interval("background_brightness", 0.3, 0.9),
    Interval("yaw", -0.5, 0.5),
    Interval("pitch", -0.5, 0.5),
    Interval("mouth_curvature", -1.0, 1.0),
    Interval("lighting_direction", 0.0, TWO_PI, closed=False),
    Interval("lighting_strength", 0.0, 0.5),
    Interval("glasses_flag", 0.0, 1.0),
    Interval("glasses_darkness", 0.0, 1.0),
)

N_IDENTITY = len(IDENTITY_INTERVALS)
N_ATTRIBUTES = len(ATTRIBUTE_INTERVALS)

IDENTITY_NAMES = tuple(iv.name for iv in IDENTITY_INTERVALS)
ATTRIBUTE_NAMES = tuple(iv.name for iv in ATTRIBUTE_INTERVALS)

# attribute indices used across the package
BACKGROUND_HUE = 0
BACKGROUND_BRIGHTNESS = 1
YAW = 2
PITCH = 3
MOUTH_CURVATURE = 4
LIGHTING_DIRECTION = 5
LIGHTING_STRENGTH = 6
GLASSES_FLAG = 7
GLASSES_DARKNESS = 8

# identity indices
FACE_WIDTH = 3
FACE_HEIGHT = 4


def _interval_errors(values: tuple[float, ...], intervals: tuple[Interval, ...]) -> list[str]:
    errors: list[str] = []
    for v, iv in zip(values, intervals):
        if not iv.contains(float(v)):
            bracket = "]" if iv.closed else ")"
            errors.append(f"{iv.name}={v!r} outside [{iv.lo}, {iv.hi}{bracket}")
        elif iv.name == "glasses_flag" and v not in (0.0, 1.0):
            errors.append(f"glasses_flag={v!r} must be 0 or 1")
    return errors


class FactorVector(BaseModel):
    """
    Disentangled generative factors of one synthetic face.

    `identity` holds the 8 identity factors and `attributes` the 9 non-identity
    factors, both in the order of IDENTITY_INTERVALS / ATTRIBUTE_INTERVALS.
    """

    model_config = ConfigDict(frozen=True)

    identity: tuple[float, ...]
    attributes: tuple[float, ...]

    @field_validator("identity", "attributes", mode="before")
    @classmethod
    def _to_float_tuple(cls, v: Any) -> Any:
        return tuple(float(x) for x in v)

    @model_validator(mode="after")
    def _check_intervals(self) -> FactorVector:
        if len(self.identity) != N_IDENTITY:
            raise ValueError(f"identity must have {N_IDENTITY} values, got {len(self.identity)}")
        if len(self.attributes) != N_ATTRIBUTES:
            raise ValueError(f"attributes must have {N_ATTRIBUTES} values, got {len(self.attributes)}")
        errors = _interval_errors(self.identity, IDENTITY_INTERVALS)
        errors += _interval_errors(self.attributes, ATTRIBUTE_INTERVALS)
        if errors:
            raise ValueError("; ".join(errors))
        return self

    def get(self, name: str) -> float:
        if name in IDENTITY_NAMES:
            return self.identity[IDENTITY_NAMES.index(name)]
        if name in ATTRIBUTE_NAMES:
            return self.attributes[ATTRIBUTE_NAMES.index(name)]
        raise KeyError(f"unknown factor {name!r}")

    @property
    def has_glasses(self) -> bool:
        return self.attributes[GLASSES_FLAG] == 1.0

    def identity_array(self) -> np.ndarray:
        return np.asarray(self.identity, dtype=np.float64)

    def attribute_array(self) -> np.ndarray:
        return np.asarray(self.attributes, dtype=np.float64)

    def with_identity(self, identity: Any) -> FactorVector:
        return FactorVector(identity=tuple(identity), attributes=self.attributes)

    def with_attributes(self, attributes: Any) -> FactorVector:
        return FactorVector(identity=self.identity, attributes=tuple(attributes))

    def replace(self, **named: float) -> FactorVector:
        ident = list(self.identity)
        attrs = list(self.attributes)
        for key, value in named.items():
            if key in IDENTITY_NAMES:
                ident[IDENTITY_NAMES.index(key)] = float(value)
            elif key in ATTRIBUTE_NAMES:
                attrs[ATTRIBUTE_NAMES.index(key)] = float(value)
            else:
                raise KeyError(f"unknown factor {key!r}")
        return FactorVector(identity=tuple(ident), attributes=tuple(attrs))

    def to_record(self) -> dict[str, list[float]]:
        return {"identity": list(self.identity), "attributes": list(self.attributes)}


def ensure_valid(factors: FactorVector) -> FactorVector:
    """Re-check intervals; catches vectors built with `model_construct`."""
    errors = _interval_errors(tuple(factors.identity), IDENTITY_INTERVALS)
    errors += _interval_errors(tuple(factors.attributes), ATTRIBUTE_INTERVALS)
    if len(factors.identity) != N_IDENTITY or len(factors.attributes) != N_ATTRIBUTES:
        errors.append("wrong factor vector length")
    if errors:
        raise FactorValidationError("; ".join(errors), violations=errors)
    return factors


def midpoint_factors() -> FactorVector:
    """Neutral factors: every interval at its midpoint, glasses off."""
    attrs = [iv.midpoint for iv in ATTRIBUTE_INTERVALS]
    attrs[GLASSES_FLAG] = 0.0
    return FactorVector(
        identity=tuple(iv.midpoint for iv in IDENTITY_INTERVALS),
        attributes=tuple(attrs),
    )


# ----------------------------
# Sampling
# ----------------------------

def _sample_block(rng: np.random.Generator, intervals: tuple[Interval, ...]) -> list[float]:
    out: list[float] = []
    for iv in intervals:
        if iv.name == "glasses_flag":
            out.append(1.0 if rng.random() < 0.5 else 0.0)
        else:
            v = float(rng.uniform(iv.lo, iv.hi))
            if not iv.closed and v >= iv.hi:
                v = iv.lo
            out.append(v)
    return out


def sample_identity(rng: np.random.Generator) -> tuple[float, ...]:
    return tuple(_sample_block(rng, IDENTITY_INTERVALS))


def sample_attributes(rng: np.random.Generator) -> tuple[float, ...]:
    return tuple(_sample_block(rng, ATTRIBUTE_INTERVALS))


def sample_factors(seed: int) -> FactorVector:
    rng = numpy_rng(seed)
    identity = sample_identity(rng)
    attributes = sample_attributes(rng)
    return FactorVector(identity=identity, attributes=attributes)


def make_identity_pair(seed: int) -> tuple[FactorVector, FactorVector]:
    """Two factor vectors sharing identity with independently drawn attributes."""
    rng = numpy_rng(derive_seed(seed, "identity_pair"))
    identity = sample_identity(rng)
    first = sample_attributes(rng)
    second = sample_attributes(rng)
    while second == first:
        second = sample_attributes(rng)
    return (
        FactorVector(identity=identity, attributes=first),
        FactorVector(identity=identity, attributes=second),
    )


# ----------------------------
# Normalisation to [-1, 1]
# ----------------------------

_ID_LO = np.array([iv.lo for iv in IDENTITY_INTERVALS])
_ID_W = np.array([iv.width for iv in IDENTITY_INTERVALS])
_ATTR_LO = np.array([iv.lo for iv in ATTRIBUTE_INTERVALS])
_ATTR_W = np.array([iv.width for iv in ATTRIBUTE_INTERVALS])


def normalize_identity(identity: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(identity, dtype=np.float64) - _ID_LO) / _ID_W - 1.0


def denormalize_identity(unit: np.ndarray) -> np.ndarray:
    return (np.asarray(unit, dtype=np.float64) + 1.0) * 0.5 * _ID_W + _ID_LO


def normalize_attributes(attributes: np.ndarray) -> np.ndarray:
    return 2.0 * (np.asarray(attributes, dtype=np.float64) - _ATTR_LO) / _ATTR_W - 1.0


def denormalize_attributes(unit: np.ndarray) -> np.ndarray:
    return (np.asarray(unit, dtype=np.float64) + 1.0) * 0.5 * _ATTR_W + _ATTR_LO


def identity_widths() -> np.ndarray:
    return _ID_W.copy()


def attribute_widths() -> np.ndarray:
    return _ATTR_W.copy()


def clip_attributes(attributes: np.ndarray) -> np.ndarray:
    """Clip into the attribute box; lighting direction wraps instead."""
    out = np.asarray(attributes, dtype=np.float64).copy()
    for i, iv in enumerate(ATTRIBUTE_INTERVALS):
        if iv.name == "lighting_direction":
            out[i] = float(np.mod(out[i], TWO_PI))
            if out[i] >= TWO_PI:
                out[i] = 0.0
        else:
            out[i] = float(np.clip(out[i], iv.lo, iv.hi))
    return out


def clip_identity(identity: np.ndarray) -> np.ndarray:
    lo = _ID_LO
    return np.clip(np.asarray(identity, dtype=np.float64), lo, lo + _ID_W)
