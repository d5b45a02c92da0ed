# src/tripletswap/analysis/landmarks.py
"""
Landmark images: 19 colour-coded dots on black, placed with the same
FaceGeometry the face rasterizer uses.

    eyes      2 points   red
    boundary 12 points   green   (angles -pi/2 + k*pi/6 on the face ellipse)
    mouth     5 points   blue    (p in {-w, -w/2, 0, w/2, w} on the mouth line)
"""
from __future__ import annotations

import math

import numpy as np
import torch

from tripletswap.analysis.render import (
    MOUTH_HALF_WIDTH,
    RESOLUTION,
    FaceGeometry,
    face_geometry,
    to_pixel,
)
from tripletswap.domain.coefficients import CoefficientSet

N_EYE_POINTS = 2
N_BOUNDARY_POINTS = 12
N_MOUTH_POINTS = 5
LANDMARK_COUNT = N_EYE_POINTS + N_BOUNDARY_POINTS + N_MOUTH_POINTS

DOT_RADIUS_PX = 1.5

# one channel per group
GROUP_CHANNEL = np.array(
    [0] * N_EYE_POINTS + [1] * N_BOUNDARY_POINTS + [2] * N_MOUTH_POINTS, dtype=np.int64
)


def coefficient_geometry(coeffs: CoefficientSet) -> FaceGeometry:
    return face_geometry(coeffs.identity_coeffs, coeffs.yaw, coeffs.pitch)


def landmark_local_points(coeffs: CoefficientSet) -> np.ndarray:
    """[LANDMARK_COUNT, 2] points (p, q) in the face-local frame."""
    geom = coefficient_geometry(coeffs)
    pts: list[tuple[float, float]] = list(geom.eye_centers_local())
    for k in range(N_BOUNDARY_POINTS):
        theta = -0.5 * math.pi + k * math.pi / 6.0
        pts.append((geom.half_width * math.cos(theta), geom.half_height * math.sin(theta)))
    for frac in (-1.0, -0.5, 0.0, 0.5, 1.0):
        p = frac * MOUTH_HALF_WIDTH
        q = float(geom.mouth_row(np.asarray(p), coeffs.curvature))
        pts.append((p, q))
    return np.asarray(pts, dtype=np.float64)


def landmark_points(coeffs: CoefficientSet, size: int = RESOLUTION) -> np.ndarray:
    """[LANDMARK_COUNT, 2] pixel coordinates (x, y)."""
    geom = coefficient_geometry(coeffs)
    local = landmark_local_points(coeffs)
    u, v = geom.local_to_image(local[:, 0], local[:, 1])
    x, y = to_pixel(u, v, size)
    return np.stack([x, y], axis=1)


def render_landmarks(coeffs: CoefficientSet, size: int = RESOLUTION) -> torch.Tensor:
    """LandmarkImage: float32 [3, size, size], soft dots on black."""
    pts = landmark_points(coeffs, size)
    ys, xs = np.meshgrid(np.arange(size, dtype=np.float64), np.arange(size, dtype=np.float64), indexing="ij")
    canvas = np.zeros((3, size, size), dtype=np.float64)
    for (px, py), ch in zip(pts, GROUP_CHANNEL):
        dist = np.sqrt((xs - px) ** 2 + (ys - py) ** 2)
        dot = np.clip(DOT_RADIUS_PX + 0.5 - dist, 0.0, 1.0)
        canvas[ch] = np.maximum(canvas[ch], dot)
    return torch.from_numpy(canvas.astype(np.float32))
