"""Gaussian-mixture clustering of instance-style vectors (EM with a covariance floor)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .errors import ConfigError, InsufficientDataError, ShapeError
from .numerics import cholesky_psd, clip_spectrum
from .style_stats import GaussianStyle, InstanceStyle, StyleSet, as_epsilons

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class ClusterConfig:
    n_clusters: int = 4
    max_iterations: int = 300
    log_likelihood_tol: float = 1e-7
    covariance_floor: float = 1e-6
    seed: int = 0
    # Dirichlet concentration on the mixture weights; 1.0 is plain maximum likelihood
    weight_concentration: float = 1.0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ConfigError("n_clusters must be >= 1")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        if not self.log_likelihood_tol > 0:
            raise ConfigError("log_likelihood_tol must be positive")
        if not self.covariance_floor > 0:
            raise ConfigError("covariance_floor must be positive")
        if self.weight_concentration < 1.0:
            raise ConfigError("weight_concentration must be >= 1")


@dataclass
class StyleClusterModel:
    weights: np.ndarray
    components: list[GaussianStyle]
    final_log_likelihood: float
    iterations_run: int
    converged: bool = True
    degenerate: bool = False
    # mean per-point log-likelihood, one entry per E-step
    log_likelihood_history: list[float] = field(default_factory=list)

    @property
    def n_clusters(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


def _log_densities(x: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    n, d = x.shape
    out = np.empty((n, means.shape[0]))
    for k in range(means.shape[0]):
        L = cholesky_psd(covs[k])
        sol = solve_triangular(L, (x - means[k]).T, lower=True, check_finite=False)
        out[:, k] = -0.5 * (d * LOG_2PI + np.sum(sol * sol, axis=0)) - np.sum(np.log(np.diag(L)))
    return out


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # greedy variant: each step draws a few candidates and keeps the one that
    # lowers the total squared distance the most
    n_trials = 2 + int(np.log(k))
    centers = [x[rng.integers(x.shape[0])]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            cand = rng.choice(x.shape[0], size=n_trials, p=d2 / total)
        else:
            cand = rng.integers(x.shape[0], size=n_trials)
        pots = [np.minimum(d2, np.sum((x - x[i]) ** 2, axis=1)) for i in cand]
        best = int(np.argmin([p.sum() for p in pots]))
        centers.append(x[cand[best]])
        d2 = pots[best]
    return np.stack(centers)


def _m_step(x, resp, floor, concentration):
    n, d = x.shape
    k = resp.shape[1]
    nk = resp.sum(axis=0)
    weights = (nk + concentration - 1.0) / (n + k * (concentration - 1.0))
    means = np.zeros((k, d))
    covs = np.zeros((k, d, d))
    for j in range(k):
        if nk[j] <= 0:
            means[j] = x.mean(axis=0)
            covs[j] = floor * np.eye(d)
            continue
        means[j] = resp[:, j] @ x / nk[j]
        diff = x - means[j]
        s = (diff * resp[:, j:j + 1]).T @ diff / nk[j]
        covs[j] = clip_spectrum(0.5 * (s + s.T), floor)
    return weights, means, covs, nk


def fit_style_gmm(styles: StyleSet, config: ClusterConfig) -> StyleClusterModel:
    """Fit an ``n_clusters``-component full-covariance GMM to style vectors by EM.

    Points are put in a canonical (lexicographic) order before seeding, so the
    fit does not depend on the order the styles are supplied in. Covariances
    are kept at or above ``covariance_floor`` by clipping the spectrum, which is
    the exact maximizer of the M-step under that constraint; the log-likelihood
    therefore never decreases (except right after a collapsed component is
    re-seeded, which is recorded by ``degenerate``).
    """
    x = as_epsilons(styles)
    k = config.n_clusters
    if x.shape[0] < k:
        raise InsufficientDataError(f"{x.shape[0]} points cannot support {k} clusters")
    n, d = x.shape
    x = x[np.lexsort(x.T[::-1])]
    rng = np.random.default_rng(config.seed)
    floor = config.covariance_floor

    if np.all(x == x[0]):
        comp = GaussianStyle(x[0].copy(), floor * np.eye(d))
        ll = float(np.mean(_log_densities(x, x[:1], comp.cov[None])))
        return StyleClusterModel(
            weights=np.full(k, 1.0 / k),
            components=[comp] * k,
            final_log_likelihood=ll,
            iterations_run=0,
            converged=True,
            degenerate=k > 1,
            log_likelihood_history=[ll],
        )

    centers = _kmeanspp(x, k, rng)
    d2 = ((x[:, None, :] - centers[None]) ** 2).sum(axis=2)
    resp = np.zeros((n, k))
    resp[np.arange(n), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs, nk = _m_step(x, resp, floor, config.weight_concentration)

    history: list[float] = []
    degenerate = False
    converged = False
    iterations = 0
    while True:
        logp = _log_densities(x, means, covs) + np.log(np.maximum(weights, 1e-300))
        norm = logsumexp(logp, axis=1)
        ll = float(norm.mean())
        history.append(ll)
        if len(history) > 1 and history[-1] - history[-2] < config.log_likelihood_tol:
            converged = True
            break
        if iterations >= config.max_iterations:
            break
        resp = np.exp(logp - norm[:, None])
        weights, means, covs, nk = _m_step(x, resp, floor, config.weight_concentration)
        iterations += 1
        dead = np.flatnonzero(nk < 1e-8 * n)
        if dead.size:
            degenerate = True
            # re-seed from the worst-explained point
            worst = int(np.argmin(norm))
            pooled = clip_spectrum(np.cov(x.T, bias=True).reshape(d, d), floor)
            for j in dead:
                means[j] = x[worst]
                covs[j] = pooled
            weights = np.full(k, 1.0 / k)
            history.clear()

    comps = [GaussianStyle(means[j], covs[j]) for j in range(k)]
    return StyleClusterModel(
        weights=np.asarray(weights, dtype=np.float64) / np.sum(weights),
        components=comps,
        final_log_likelihood=history[-1],
        iterations_run=iterations,
        converged=converged,
        degenerate=degenerate,
        log_likelihood_history=history,
    )


def predict_cluster(model: StyleClusterModel, style) -> tuple[int, np.ndarray]:
    """Posterior component probabilities for one style; ties go to the lowest index."""
    eps = style.epsilon if isinstance(style, InstanceStyle) else np.asarray(style, dtype=np.float64).reshape(-1)
    if eps.shape[0] != model.dim:
        raise ShapeError(f"style dimension {eps.shape[0]} does not match model dimension {model.dim}")
    resp = predict_proba(model, eps[None])[0]
    return int(np.argmax(resp)), resp


def predict_proba(model: StyleClusterModel, styles: StyleSet) -> np.ndarray:
    x = as_epsilons(styles)
    if x.shape[1] != model.dim:
        raise ShapeError(f"style dimension {x.shape[1]} does not match model dimension {model.dim}")
    means = np.stack([c.mean for c in model.components])
    covs = np.stack([c.cov for c in model.components])
    logp = _log_densities(x, means, covs) + np.log(np.maximum(model.weights, 1e-300))
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
