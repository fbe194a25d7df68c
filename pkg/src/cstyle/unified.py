"""The unified domain: aggregating cluster styles into one Gaussian and sampling from it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .clustering import ClusterConfig, fit_style_gmm
from .errors import ConfigError, EmptyDomainError, ShapeError
from .numerics import cholesky_psd, regularize_psd, sqrt_psd
from .style_stats import GaussianStyle, StyleSet, SIGMA_FLOOR

METHODS = ("average", "barycenter")


@dataclass(frozen=True)
class UnifiedDomain:
    style: GaussianStyle
    method: str
    iterations: int = 0
    residual: float = 0.0
    converged: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown unified-domain method {self.method!r}")

    @property
    def dim(self) -> int:
        return self.style.dim

    @property
    def channels(self) -> int:
        return self.style.dim // 2

    @property
    def mean(self) -> np.ndarray:
        return self.style.mean

    @property
    def cov(self) -> np.ndarray:
        return self.style.cov


def _check_components(components: Sequence[GaussianStyle]) -> list[GaussianStyle]:
    comps = list(components)
    if not comps:
        raise EmptyDomainError("need at least one component")
    d = comps[0].dim
    if any(c.dim != d for c in comps):
        raise ShapeError("components have different dimensions")
    return comps


def _barycenter_map(sigma: np.ndarray, covs: Sequence[np.ndarray]) -> np.ndarray:
    root = sqrt_psd(sigma)
    acc = np.zeros_like(sigma)
    for c in covs:
        inner = root @ c @ root
        acc += sqrt_psd(0.5 * (inner + inner.T))
    out = acc / len(covs)
    return 0.5 * (out + out.T)


def barycenter_gaussian(components: Sequence[GaussianStyle], tol: float = 1e-10,
                        max_iter: int = 500) -> UnifiedDomain:
    """Wasserstein barycenter of Gaussians by fixed-point iteration on the covariance.

    The mean is the plain average of component means. The covariance starts
    from the average covariance and is iterated through
    ``S <- mean_k (S^1/2 S_k S^1/2)^1/2`` until successive iterates differ by
    less than ``tol`` in Frobenius norm. Failing to converge is not an error;
    ``converged`` is False and ``residual`` says how far off the iterate is.
    """
    comps = _check_components(components)
    covs = [c.cov for c in comps]
    for c in covs:
        sqrt_psd(c)  # raises NotPSDError on clearly indefinite input
    mean = np.mean([c.mean for c in comps], axis=0)
    sigma = np.mean(covs, axis=0)
    iterations = 0
    converged = False
    while iterations < max_iter:
        nxt = _barycenter_map(sigma, covs)
        iterations += 1
        step = np.linalg.norm(nxt - sigma)
        sigma = nxt
        if step < tol:
            converged = True
            break
    residual = float(np.linalg.norm(sigma - _barycenter_map(sigma, covs)))
    return UnifiedDomain(GaussianStyle(mean, sigma), "barycenter", iterations, residual, converged)


def average_clusters(components: Sequence[GaussianStyle]) -> UnifiedDomain:
    """Elementwise average of cluster means and covariances."""
    comps = _check_components(components)
    mean = np.mean([c.mean for c in comps], axis=0)
    cov = np.mean([c.cov for c in comps], axis=0)
    return UnifiedDomain(GaussianStyle(mean, 0.5 * (cov + cov.T)), "average")


def determine_unified_domain(styles: StyleSet, cluster_config: ClusterConfig,
                             method: str = "average", tol: float = 1e-10,
                             max_iter: int = 500) -> UnifiedDomain:
    """Cluster the style vectors, then aggregate the cluster Gaussians."""
    if method not in METHODS:
        raise ConfigError(f"unknown unified-domain method {method!r}")
    model = fit_style_gmm(styles, cluster_config)
    if method == "barycenter":
        return barycenter_gaussian(model.components, tol=tol, max_iter=max_iter)
    return average_clusters(model.components)


class StyleSampler:
    """Draws style vectors from a unified domain with a cached Cholesky factor."""

    def __init__(self, domain: UnifiedDomain, sigma_floor: float = SIGMA_FLOOR,
                 jitter: float = 1e-10):
        self.domain = domain
        self.sigma_floor = sigma_floor
        cov = domain.cov
        if not np.any(cov):
            self.factor = np.zeros_like(cov)
        else:
            scale = max(1.0, float(np.max(np.abs(np.diag(cov)))))
            self.factor = cholesky_psd(regularize_psd(cov, jitter * scale))

    def draw(self, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
        """``n`` draws split into ``(mu_s, sigma_s)`` arrays of shape ``(n, C)``."""
        g = rng.standard_normal((n, self.domain.dim))
        eps = self.domain.mean + g @ self.factor.T
        c = self.domain.channels
        return eps[:, :c], np.maximum(eps[:, c:], self.sigma_floor)


def sample_style(domain: UnifiedDomain, rng: np.random.Generator,
                 sigma_floor: float = SIGMA_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """One draw ``eps_s ~ N(mean, cov)`` split into ``(mu_s, sigma_s)``; sigma is clamped at ``sigma_floor``."""
    mu, sigma = StyleSampler(domain, sigma_floor).draw(rng, 1)
    return mu[0], sigma[0]
