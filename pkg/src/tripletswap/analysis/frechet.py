# src/tripletswap/analysis/frechet.py
"""
Fréchet distance between Gaussians fitted to two feature sets:

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2})

Tr (S_a S_b)^{1/2} is evaluated as Tr sqrt(A^{1/2} S_b A^{1/2}) with
A^{1/2} from a symmetric eigendecomposition, so everything stays real and
negative round-off eigenvalues are clamped at zero.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from tripletswap.domain.errors import ConfigValidationError


def gaussian_moments(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n, d = x.shape
    if n < d + 1:
        raise ConfigValidationError(
            "feature set too small for covariance estimate",
            n=n,
            dim=d,
            required=d + 1,
        )
    mu = x.mean(axis=0)
    sigma = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return mu, sigma


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_from_moments(
    mu_a: np.ndarray, sigma_a: np.ndarray, mu_b: np.ndarray, sigma_b: np.ndarray
) -> float:
    mu_a = np.atleast_1d(np.asarray(mu_a, dtype=np.float64))
    mu_b = np.atleast_1d(np.asarray(mu_b, dtype=np.float64))
    sigma_a = np.atleast_2d(np.asarray(sigma_a, dtype=np.float64))
    sigma_b = np.atleast_2d(np.asarray(sigma_b, dtype=np.float64))
    if mu_a.shape != mu_b.shape or sigma_a.shape != sigma_b.shape:
        raise ConfigValidationError("moment shapes differ", a=mu_a.shape, b=mu_b.shape)

    root_a = _psd_sqrt(sigma_a)
    inner = root_a @ sigma_b @ root_a
    w = linalg.eigh(0.5 * (inner + inner.T), eigvals_only=True)
    tr_covmean = float(np.sqrt(np.clip(w, 0.0, None)).sum())

    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * tr_covmean)
    return max(value, 0.0)


def frechet_distance(features_a: np.ndarray, features_b: np.ndarray) -> float:
    mu_a, sigma_a = gaussian_moments(features_a)
    mu_b, sigma_b = gaussian_moments(features_b)
    return frechet_from_moments(mu_a, sigma_a, mu_b, sigma_b)
