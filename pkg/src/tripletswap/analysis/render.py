# src/tripletswap/analysis/render.py
"""
Deterministic rasterizer for synthetic faces.

Everything is drawn in a face-local frame (p, q) measured in fractions of the
image side, centred on the face, then mapped into the image by a yaw/pitch
dependent offset and shear. The same `FaceGeometry` drives the landmark
renderer, so keypoints land exactly on the features drawn here.

Edges are anti-aliased with a linear falloff of FALLOFF_PX pixels so the
oracle encoders have a smooth signal to regress.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
from matplotlib.colors import hsv_to_rgb

from tripletswap.domain.factors import (
    BACKGROUND_BRIGHTNESS,
    BACKGROUND_HUE,
    GLASSES_DARKNESS,
    GLASSES_FLAG,
    LIGHTING_DIRECTION,
    LIGHTING_STRENGTH,
    MOUTH_CURVATURE,
    PITCH,
    YAW,
    FactorVector,
    ensure_valid,
)

RESOLUTION = 64
FALLOFF_PX = 1.0

# pose
CENTER_YAW_SHIFT = 0.10
CENTER_PITCH_SHIFT = 0.08
SHEAR_GAIN = 0.35

# features, in face-local units
EYE_ROW = -0.07
EYE_ASPECT = 0.6
BROW_GAP = 0.025
BROW_WIDTH_GAIN = 1.2
MOUTH_ROW = 0.15
MOUTH_HALF_WIDTH = 0.09
MOUTH_DEPTH = 0.04
MOUTH_THICKNESS = 0.012
GLASSES_MARGIN_X = 0.025
GLASSES_MARGIN_Y = 0.02
GLASSES_FRAME = 0.008
GLASSES_BRIDGE_HALF_HEIGHT = 0.006
LENS_DARKENING = 0.75

# colours
BACKGROUND_SATURATION = 0.55
SKIN_VALUE = 0.88
EYE_SATURATION = 0.65
EYE_VALUE = 0.45
BROW_RGB = (0.18, 0.12, 0.08)
MOUTH_RGB = (0.55, 0.12, 0.14)
FRAME_RGB = (0.05, 0.05, 0.05)


@dataclass(frozen=True)
class FaceGeometry:
    """Pose/identity geometry shared by the face and landmark renderers."""

    cx: float
    cy: float
    sx: float
    sy: float
    half_width: float
    half_height: float
    eye_spacing: float
    eye_rx: float
    eye_ry: float
    brow_thickness: float

    def local_to_image(self, p: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        u = self.cx + p + self.sx * q
        v = self.cy + q + self.sy * p
        return u, v

    def image_to_local(self, u: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        du = u - self.cx
        dv = v - self.cy
        det = 1.0 - self.sx * self.sy
        p = (du - self.sx * dv) / det
        q = (dv - self.sy * du) / det
        return p, q

    def eye_centers_local(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (-self.eye_spacing, EYE_ROW), (self.eye_spacing, EYE_ROW)

    def mouth_row(self, p: np.ndarray, curvature: float) -> np.ndarray:
        """Mouth centre line; positive curvature is a smile (corners raised)."""
        t = np.clip(p / MOUTH_HALF_WIDTH, -1.0, 1.0)
        return MOUTH_ROW + curvature * MOUTH_DEPTH * (1.0 - t * t)


def face_geometry(identity: Sequence[float], yaw: float, pitch: float) -> FaceGeometry:
    return FaceGeometry(
        cx=0.5 + CENTER_YAW_SHIFT * yaw,
        cy=0.5 + CENTER_PITCH_SHIFT * pitch,
        sx=SHEAR_GAIN * yaw,
        sy=SHEAR_GAIN * pitch,
        half_width=float(identity[3]),
        half_height=float(identity[4]),
        eye_spacing=float(identity[5]),
        eye_rx=float(identity[6]),
        eye_ry=float(identity[6]) * EYE_ASPECT,
        brow_thickness=float(identity[7]),
    )


def geometry_of(factors: FactorVector) -> FaceGeometry:
    return face_geometry(factors.identity, factors.attributes[YAW], factors.attributes[PITCH])


def to_pixel(u: np.ndarray, v: np.ndarray, size: int = RESOLUTION) -> tuple[np.ndarray, np.ndarray]:
    """Normalised image coordinates -> pixel index coordinates (x, y)."""
    return u * size - 0.5, v * size - 0.5


def pixel_grid(size: int = RESOLUTION) -> tuple[np.ndarray, np.ndarray]:
    centers = (np.arange(size, dtype=np.float64) + 0.5) / size
    v, u = np.meshgrid(centers, centers, indexing="ij")
    return u, v


# ----------------------------
# Soft coverage primitives (distances in local units, converted to pixels)
# ----------------------------

def _coverage(distance: np.ndarray, size: int) -> np.ndarray:
    return np.clip(0.5 - distance * size / FALLOFF_PX, 0.0, 1.0)


def ellipse_coverage(
    p: np.ndarray, q: np.ndarray, pc: float, qc: float, rx: float, ry: float, size: int
) -> np.ndarray:
    dp = (p - pc) / rx
    dq = (q - qc) / ry
    r = np.sqrt(dp * dp + dq * dq)
    grad = np.sqrt((dp / rx) ** 2 + (dq / ry) ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.where(grad > 1e-12, (r * r - r) / np.maximum(grad, 1e-12), -min(rx, ry))
    return _coverage(dist, size)


def box_coverage(
    p: np.ndarray, q: np.ndarray, pc: float, qc: float, hx: float, hy: float, size: int
) -> np.ndarray:
    dx = np.abs(p - pc) - hx
    dy = np.abs(q - qc) - hy
    inside = np.maximum(dx, dy)
    outside = np.sqrt(np.maximum(dx, 0.0) ** 2 + np.maximum(dy, 0.0) ** 2)
    dist = np.where((dx <= 0.0) & (dy <= 0.0), inside, outside)
    return _coverage(dist, size)


def mouth_coverage(
    p: np.ndarray, q: np.ndarray, geom: FaceGeometry, curvature: float, size: int
) -> np.ndarray:
    dist = np.maximum(
        np.abs(q - geom.mouth_row(p, curvature)) - MOUTH_THICKNESS,
        np.abs(p) - MOUTH_HALF_WIDTH,
    )
    return _coverage(dist, size)


def _lens_boxes(geom: FaceGeometry) -> list[tuple[float, float, float, float]]:
    hx = geom.eye_rx + GLASSES_MARGIN_X
    hy = geom.eye_ry + GLASSES_MARGIN_Y
    return [(pc, qc, hx, hy) for pc, qc in geom.eye_centers_local()]


def _bridge_box(geom: FaceGeometry) -> tuple[float, float, float, float]:
    inner = geom.eye_spacing - geom.eye_rx - GLASSES_MARGIN_X
    return (0.0, EYE_ROW, max(inner, 0.0) + GLASSES_FRAME, GLASSES_BRIDGE_HALF_HEIGHT)


@dataclass(frozen=True)
class RegionMasks:
    """
    Boolean pixel masks, each a function of geometry only (identity + pose),
    so varying the attribute a mask belongs to never moves the mask.
    """

    face: np.ndarray
    background: np.ndarray
    eyes: np.ndarray
    mouth: np.ndarray
    glasses: np.ndarray
    glasses_frame: np.ndarray


def region_masks(geom: FaceGeometry, size: int = RESOLUTION) -> RegionMasks:
    u, v = pixel_grid(size)
    p, q = geom.image_to_local(u, v)
    face = ellipse_coverage(p, q, 0.0, 0.0, geom.half_width, geom.half_height, size)
    eyes = np.zeros_like(face)
    for pc, qc in geom.eye_centers_local():
        eyes = np.maximum(eyes, ellipse_coverage(p, q, pc, qc, geom.eye_rx, geom.eye_ry, size))
    mouth_box = box_coverage(
        p, q, 0.0, MOUTH_ROW, MOUTH_HALF_WIDTH + MOUTH_THICKNESS,
        MOUTH_DEPTH + MOUTH_THICKNESS, size,
    )
    glasses = box_coverage(p, q, *_bridge_box(geom), size)
    frame = glasses.copy()
    for box in _lens_boxes(geom):
        outer = box_coverage(p, q, *box, size)
        glasses = np.maximum(glasses, outer)
        pc, qc, hx, hy = box
        inner = box_coverage(p, q, pc, qc, hx - GLASSES_FRAME, hy - GLASSES_FRAME, size)
        frame = np.maximum(frame, outer * (1.0 - inner))
    return RegionMasks(
        face=face >= 1.0,
        background=face < 1.0,
        eyes=eyes > 0.0,
        mouth=mouth_box > 0.0,
        glasses=glasses > 0.0,
        glasses_frame=frame >= 0.5,
    )


# ----------------------------
# Rasterizer
# ----------------------------

def _over(canvas: np.ndarray, rgb: np.ndarray | Sequence[float], alpha: np.ndarray) -> np.ndarray:
    color = np.asarray(rgb, dtype=np.float64).reshape(3, *([1] * (canvas.ndim - 1)))
    return canvas * (1.0 - alpha) + color * alpha


def _hsv(h: float, s: float, v: float) -> np.ndarray:
    return np.asarray(hsv_to_rgb(np.array([h, s, v], dtype=np.float64)), dtype=np.float64)


def lighting_field(direction: float, strength: float, size: int = RESOLUTION) -> np.ndarray:
    u, v = pixel_grid(size)
    ramp = (u - 0.5) * np.cos(direction) + (v - 0.5) * np.sin(direction)
    return 1.0 + 2.0 * strength * ramp


def render_array(factors: FactorVector, size: int = RESOLUTION) -> np.ndarray:
    """Float64 [3, size, size] rendering in [0, 1]."""
    ensure_valid(factors)
    ident = factors.identity
    attrs = factors.attributes
    geom = geometry_of(factors)

    u, v = pixel_grid(size)
    p, q = geom.image_to_local(u, v)

    canvas = np.broadcast_to(
        _hsv(attrs[BACKGROUND_HUE], BACKGROUND_SATURATION, attrs[BACKGROUND_BRIGHTNESS])[:, None, None],
        (3, size, size),
    ).copy()

    face = ellipse_coverage(p, q, 0.0, 0.0, geom.half_width, geom.half_height, size)
    canvas = _over(canvas, _hsv(ident[0], ident[1], SKIN_VALUE), face)

    eye_rgb = _hsv(ident[2], EYE_SATURATION, EYE_VALUE)
    brow_hx = geom.eye_rx * BROW_WIDTH_GAIN
    brow_q = EYE_ROW - geom.eye_ry - BROW_GAP
    for pc, qc in geom.eye_centers_local():
        canvas = _over(canvas, eye_rgb, ellipse_coverage(p, q, pc, qc, geom.eye_rx, geom.eye_ry, size))
        brow = box_coverage(p, q, pc, brow_q, brow_hx, 0.5 * geom.brow_thickness, size)
        canvas = _over(canvas, BROW_RGB, brow)

    canvas = _over(canvas, MOUTH_RGB, mouth_coverage(p, q, geom, attrs[MOUTH_CURVATURE], size))

    if attrs[GLASSES_FLAG] == 1.0:
        tint = 1.0 - LENS_DARKENING * attrs[GLASSES_DARKNESS]
        for pc, qc, hx, hy in _lens_boxes(geom):
            lens = box_coverage(p, q, pc, qc, hx - GLASSES_FRAME, hy - GLASSES_FRAME, size)
            canvas = canvas * (1.0 - lens * (1.0 - tint))
            outer = box_coverage(p, q, pc, qc, hx, hy, size)
            canvas = _over(canvas, FRAME_RGB, outer * (1.0 - lens))
        canvas = _over(canvas, FRAME_RGB, box_coverage(p, q, *_bridge_box(geom), size))

    canvas = canvas * lighting_field(attrs[LIGHTING_DIRECTION], attrs[LIGHTING_STRENGTH], size)[None]
    return np.clip(canvas, 0.0, 1.0)


def render(factors: FactorVector, size: int = RESOLUTION) -> torch.Tensor:
    """ImageTensor: float32 [3, size, size] in [0, 1]."""
    return torch.from_numpy(render_array(factors, size).astype(np.float32))


def render_with_masks(factors: FactorVector, size: int = RESOLUTION) -> tuple[torch.Tensor, RegionMasks]:
    return render(factors, size), region_masks(geometry_of(factors), size)
