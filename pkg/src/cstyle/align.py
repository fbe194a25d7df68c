"""Style alignment transforms.

``align_to_style`` replaces the per-channel statistics of a feature map with a
target ``(mu_s, sigma_s)``; ``partial_align`` moves them only part of the way
towards the unified-domain mean style, controlled by ``alpha``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ParameterError, ShapeError
from .style_stats import SIGMA_FLOOR


@dataclass(frozen=True)
class AlignmentParams:
    alpha: float = 0.6
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not self.sigma_floor > 0:
            raise ParameterError("sigma_floor must be positive")


def normalize(z: np.ndarray, sigma_floor: float = SIGMA_FLOOR):
    """Channel-wise standardization over the trailing two (spatial) axes.

    Returns ``(xhat, mu, s)`` where ``s = sqrt(var + sigma_floor**2)`` is the
    guarded std, so ``s`` is never below ``sigma_floor``.
    """
    mu = z.mean(axis=(-2, -1), keepdims=True)
    centered = z - mu
    var = np.mean(centered * centered, axis=(-2, -1), keepdims=True)
    s = np.sqrt(var + sigma_floor * sigma_floor)
    return centered / s, mu, s


def normalize_backward(dxhat: np.ndarray, xhat: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Gradient through ``normalize`` with respect to its input."""
    m1 = dxhat.mean(axis=(-2, -1), keepdims=True)
    m2 = np.mean(dxhat * xhat, axis=(-2, -1), keepdims=True)
    return (dxhat - m1 - xhat * m2) / s


def _as_map(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3:
        raise ShapeError(f"expected a C x H x W feature map, got shape {z.shape}")
    return z


def align_to_style(z, mu_s, sigma_s, sigma_floor: float = SIGMA_FLOOR) -> np.ndarray:
    """``sigma_s * (z - mu_x) / sigma_x + mu_s`` per channel."""
    z = _as_map(z)
    mu_s = np.asarray(mu_s, dtype=np.float64).reshape(-1, 1, 1)
    sigma_s = np.asarray(sigma_s, dtype=np.float64).reshape(-1, 1, 1)
    if mu_s.shape[0] != z.shape[0] or sigma_s.shape[0] != z.shape[0]:
        raise ShapeError("target style length does not match channel count")
    xhat, _, _ = normalize(z, sigma_floor)
    return sigma_s * xhat + mu_s


def interpolated_target(mu_u, sigma_u, unified_mean, alpha: float):
    """Target statistics ``(alpha*mu_u + (1-alpha)*mu_T, alpha*sigma_u + (1-alpha)*sigma_T)``."""
    unified_mean = np.asarray(unified_mean, dtype=np.float64).reshape(-1)
    c = unified_mean.shape[0] // 2
    mu_t = unified_mean[:c].reshape(-1, 1, 1)
    sigma_t = unified_mean[c:].reshape(-1, 1, 1)
    return alpha * mu_u + (1.0 - alpha) * mu_t, alpha * sigma_u + (1.0 - alpha) * sigma_t


def partial_align(z, unified_mean, params: AlignmentParams = AlignmentParams()) -> np.ndarray:
    """Move the style of ``z`` towards the unified mean style by ``1 - alpha``.

    ``alpha = 1`` leaves the map as it is, ``alpha = 0`` is a full projection
    onto ``(mu_T, sigma_T)``. Works on a single map or a batch (leading axis).
    """
    if not isinstance(params, AlignmentParams):
        params = AlignmentParams(float(params))
    z = np.asarray(z, dtype=np.float64)
    if z.ndim not in (3, 4):
        raise ShapeError(f"expected C x H x W or N x C x H x W, got shape {z.shape}")
    unified_mean = np.asarray(unified_mean, dtype=np.float64).reshape(-1)
    if unified_mean.shape[0] != 2 * z.shape[-3]:
        raise ShapeError("unified mean length must be twice the channel count")
    if np.any(unified_mean[z.shape[-3]:] < 0):
        raise ParameterError("unified sigma must be nonnegative")
    xhat, mu_u, _ = normalize(z, params.sigma_floor)
    # the raw (unguarded) std is what alpha=1 has to reproduce
    sigma_u = np.sqrt(np.mean((z - mu_u) ** 2, axis=(-2, -1), keepdims=True))
    mu_tgt, sigma_tgt = interpolated_target(mu_u, sigma_u, unified_mean, params.alpha)
    return sigma_tgt * xhat + mu_tgt
