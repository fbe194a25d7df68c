"""Instance and domain style statistics, and distances between them.

An instance style is the per-channel mean and (population) standard deviation
of a ``C x H x W`` feature map, packed as ``epsilon = concat(mu, sigma)``.
A domain style is the Gaussian fitted to a set of such vectors.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import EmptyDomainError, ShapeError
from .numerics import check_symmetric, eigh_psd, sqrt_psd

# guard on sigma wherever it ends up in a denominator
SIGMA_FLOOR = 1e-5


@dataclass(frozen=True)
class InstanceStyle:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        if mu.shape != sigma.shape:
            raise ShapeError("mu and sigma must have the same length")
        if np.any(sigma < 0):
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @property
    def channels(self) -> int:
        return self.mu.shape[0]

    @property
    def epsilon(self) -> np.ndarray:
        return np.concatenate([self.mu, self.sigma])

    @classmethod
    def from_epsilon(cls, eps) -> "InstanceStyle":
        eps = np.asarray(eps, dtype=np.float64).reshape(-1)
        if eps.shape[0] % 2:
            raise ShapeError("style vector must have even length")
        c = eps.shape[0] // 2
        return cls(eps[:c], eps[c:])


@dataclass(frozen=True)
class GaussianStyle:
    """Gaussian over style vectors: ``N(mean, cov)`` in ``R^{2C}``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = check_symmetric(self.cov)
        if cov.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(f"covariance shape {cov.shape} does not match mean length {mean.shape[0]}")
        if not np.all(np.isfinite(mean)):
            raise ValueError("mean has non-finite entries")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def split_mean(self) -> tuple[np.ndarray, np.ndarray]:
        c = self.dim // 2
        return self.mean[:c], self.mean[c:]


StyleSet = Union[Sequence[InstanceStyle], np.ndarray]


def as_epsilons(styles: StyleSet) -> np.ndarray:
    """Stack styles into an ``(n, 2C)`` array; arrays pass through after a shape check."""
    if isinstance(styles, np.ndarray):
        eps = np.asarray(styles, dtype=np.float64)
        if eps.ndim != 2 or eps.shape[1] % 2:
            raise ShapeError(f"expected an (n, 2C) array of style vectors, got {eps.shape}")
        return eps
    styles = list(styles)
    if not styles:
        return np.zeros((0, 0))
    c = styles[0].channels
    if any(s.channels != c for s in styles):
        raise ShapeError("styles have mixed channel counts")
    return np.stack([s.epsilon for s in styles])


def compute_instance_style(z) -> InstanceStyle:
    """Per-channel mean and population std of a ``C x H x W`` map (no Bessel correction)."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 3 or min(z.shape) < 1:
        raise ShapeError(f"expected a C x H x W feature map, got shape {z.shape}")
    flat = z.reshape(z.shape[0], -1)
    mu = flat.mean(axis=1)
    sigma = np.sqrt(np.mean((flat - mu[:, None]) ** 2, axis=1))
    return InstanceStyle(mu, sigma)


def batch_styles(z) -> np.ndarray:
    """Style vectors for a batch ``(N, C, H, W)``, returned as ``(N, 2C)``."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 4:
        raise ShapeError(f"expected an N x C x H x W batch, got shape {z.shape}")
    flat = z.reshape(z.shape[0], z.shape[1], -1)
    mu = flat.mean(axis=2)
    sigma = np.sqrt(np.mean((flat - mu[..., None]) ** 2, axis=2))
    return np.concatenate([mu, sigma], axis=1)


def estimate_domain_style(styles: StyleSet) -> GaussianStyle:
    """Mean and population covariance (``1/n``) of a domain's style vectors."""
    eps = as_epsilons(styles)
    if eps.shape[0] == 0:
        raise EmptyDomainError("cannot estimate a domain style from zero instances")
    mean = eps.mean(axis=0)
    centered = eps - mean
    cov = centered.T @ centered / eps.shape[0]
    return GaussianStyle(mean, 0.5 * (cov + cov.T))


def frechet_distance(a: GaussianStyle, b: GaussianStyle) -> float:
    """2-Wasserstein (Frechet) distance between two Gaussians.

    ``d^2 = |m_a - m_b|^2 + Tr(S_a + S_b - 2 (S_b^1/2 S_a S_b^1/2)^1/2)``
    """
    if a.dim != b.dim:
        raise ShapeError(f"dimension mismatch: {a.dim} vs {b.dim}")
    root_b = sqrt_psd(b.cov, eig_floor=0.0)
    cross = root_b @ a.cov @ root_b
    cross = sqrt_psd(0.5 * (cross + cross.T), eig_floor=0.0)
    diff = a.mean - b.mean
    tr = np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    # round-off can leave a tiny negative residue when the two Gaussians coincide
    tr = max(tr, 0.0)
    return float(np.sqrt(diff @ diff + tr))


def domain_gap_terms(unified: GaussianStyle, styles: StyleSet) -> tuple[float, float]:
    """Average L2 distance from the unified mean style to each instance, for mu and sigma separately."""
    eps = as_epsilons(styles)
    if eps.shape[0] == 0:
        raise EmptyDomainError("no instance styles supplied")
    if eps.shape[1] != unified.dim:
        raise ShapeError(f"style dimension {eps.shape[1]} does not match unified domain {unified.dim}")
    c = unified.dim // 2
    mu_t, sigma_t = unified.split_mean()
    d_mu = np.linalg.norm(eps[:, :c] - mu_t, axis=1).mean()
    d_sigma = np.linalg.norm(eps[:, c:] - sigma_t, axis=1).mean()
    return float(d_mu), float(d_sigma)


def min_eigenvalue(cov) -> float:
    return float(eigh_psd(cov)[0][0])
