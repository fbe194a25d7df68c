import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cstyle.clustering import ClusterConfig
from cstyle.errors import EmptyDomainError, NotPSDError, ShapeError
from cstyle.numerics import sqrt_psd
from cstyle.style_stats import GaussianStyle, estimate_domain_style
from cstyle.unified import (StyleSampler, UnifiedDomain, average_clusters, barycenter_gaussian,
                            determine_unified_domain, sample_style)


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


def fixed_point_residual(sigma, covs):
    root = sqrt_psd(sigma)
    mapped = np.mean([sqrt_psd(root @ c @ root) for c in covs], axis=0)
    return np.linalg.norm(sigma - mapped)


class TestBarycenter:
    def test_identical_components(self):
        g = GaussianStyle([1.0, 2.0], [[2.0, 0.3], [0.3, 1.0]])
        u = barycenter_gaussian([g, g, g])
        assert u.iterations == 1
        assert u.residual < 1e-12
        np.testing.assert_allclose(u.cov, g.cov, atol=1e-12)
        np.testing.assert_allclose(u.mean, g.mean)

    def test_1d_closed_form(self):
        u = barycenter_gaussian([GaussianStyle([0.0], [[1.0]]), GaussianStyle([2.0], [[9.0]])])
        assert u.mean[0] == pytest.approx(1.0)
        assert u.cov[0, 0] == pytest.approx(4.0, abs=1e-10)
        assert u.converged

    def test_diagonal_closed_form(self):
        rng = np.random.default_rng(0)
        diags = [rng.uniform(0.1, 5.0, 4) for _ in range(5)]
        comps = [GaussianStyle(rng.standard_normal(4), np.diag(d)) for d in diags]
        u = barycenter_gaussian(comps)
        expected = np.diag(np.mean([np.sqrt(d) for d in diags], axis=0) ** 2)
        np.testing.assert_allclose(u.cov, expected, atol=1e-8)

    def test_noncommuting_pair(self):
        rng = np.random.default_rng(1)
        covs = [random_spd(rng, 2), random_spd(rng, 2)]
        u = barycenter_gaussian([GaussianStyle(np.zeros(2), c) for c in covs])
        assert u.converged
        assert fixed_point_residual(u.cov, covs) < 1e-9
        assert u.residual < 1e-9

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        comps = [GaussianStyle(rng.standard_normal(3), random_spd(rng, 3)) for _ in range(4)]
        a = barycenter_gaussian(comps)
        b = barycenter_gaussian(comps[::-1])
        np.testing.assert_allclose(a.cov, b.cov, atol=1e-9)
        np.testing.assert_allclose(a.mean, b.mean, atol=1e-14)

    def test_not_psd(self):
        bad = GaussianStyle([0.0, 0.0], [[1.0, 0.0], [0.0, -1.0]])
        with pytest.raises(NotPSDError):
            barycenter_gaussian([bad, GaussianStyle([0.0, 0.0], np.eye(2))])

    def test_nonconvergence_is_flagged(self):
        rng = np.random.default_rng(3)
        comps = [GaussianStyle(np.zeros(3), random_spd(rng, 3)) for _ in range(3)]
        u = barycenter_gaussian(comps, tol=1e-30, max_iter=1)
        assert not u.converged
        assert u.iterations == 1

    def test_empty(self):
        with pytest.raises(EmptyDomainError):
            barycenter_gaussian([])


class TestAverage:
    def test_arithmetic(self):
        u = average_clusters([GaussianStyle([0.0, 0.0], np.eye(2)), GaussianStyle([2.0, 2.0], 3 * np.eye(2))])
        np.testing.assert_allclose(u.mean, [1.0, 1.0])
        np.testing.assert_allclose(u.cov, 2 * np.eye(2))
        assert u.method == "average"

    def test_single_and_idempotent(self):
        g = GaussianStyle([1.0, -1.0], [[1.0, 0.2], [0.2, 0.5]])
        for n in (1, 4):
            u = average_clusters([g] * n)
            np.testing.assert_allclose(u.mean, g.mean)
            np.testing.assert_allclose(u.cov, g.cov)

    def test_empty(self):
        with pytest.raises(EmptyDomainError):
            average_clusters([])

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            average_clusters([GaussianStyle([0.0], [[1.0]]), GaussianStyle([0.0, 0.0], np.eye(2))])


class TestDetermine:
    def test_single_cluster_methods_agree(self):
        x = np.random.default_rng(4).standard_normal((60, 4))
        a = determine_unified_domain(x, ClusterConfig(n_clusters=1), "average")
        b = determine_unified_domain(x, ClusterConfig(n_clusters=1), "barycenter")
        g = estimate_domain_style(x)
        np.testing.assert_allclose(a.mean, g.mean, atol=1e-12)
        np.testing.assert_allclose(a.cov, g.cov, atol=1e-10)
        np.testing.assert_allclose(b.cov, a.cov, atol=1e-8)

    def test_four_clusters(self):
        rng = np.random.default_rng(5)
        truth = np.array([[0, 0, 1, 1], [8, 0, 1, 2], [0, 8, 2, 1], [8, 8, 2, 2]], dtype=float)
        x = np.concatenate([t + 0.3 * rng.standard_normal((100, 4)) for t in truth])
        avg = determine_unified_domain(x, ClusterConfig(n_clusters=4), "average")
        bary = determine_unified_domain(x, ClusterConfig(n_clusters=4), "barycenter")
        np.testing.assert_allclose(avg.mean, truth.mean(axis=0), atol=0.1)
        np.testing.assert_array_equal(bary.mean, avg.mean)

    def test_unknown_method(self):
        from cstyle.errors import ConfigError
        with pytest.raises(ConfigError):
            determine_unified_domain(np.zeros((4, 2)), ClusterConfig(n_clusters=1), "median")


class TestSampling:
    def test_zero_covariance_exact(self):
        u = UnifiedDomain(GaussianStyle([0.5, -0.2, 1.0, 2.0], np.zeros((4, 4))), "average")
        rng = np.random.default_rng(0)
        for _ in range(5):
            mu, sigma = sample_style(u, rng)
            np.testing.assert_array_equal(mu, [0.5, -0.2])
            np.testing.assert_array_equal(sigma, [1.0, 2.0])

    def test_negative_sigma_clamped(self):
        u = UnifiedDomain(GaussianStyle([0.0, -0.5], np.zeros((2, 2))), "average")
        _, sigma = sample_style(u, np.random.default_rng(0), sigma_floor=1e-5)
        np.testing.assert_array_equal(sigma, [1e-5])

    def test_monte_carlo_mean(self):
        rng = np.random.default_rng(6)
        cov = random_spd(rng, 4)
        u = UnifiedDomain(GaussianStyle([0.1, -0.3, 5.0, 6.0], cov), "average")
        n = 10_000
        mu, sigma = StyleSampler(u).draw(np.random.default_rng(7), n)
        eps = np.concatenate([mu, sigma], axis=1)
        se = np.sqrt(np.diag(cov) / n)
        assert np.all(np.abs(eps.mean(axis=0) - u.mean) < 3 * se)

    def test_seeded_bit_identical(self):
        u = UnifiedDomain(GaussianStyle(np.ones(4), np.eye(4)), "average")
        a = sample_style(u, np.random.default_rng(11))
        b = sample_style(u, np.random.default_rng(11))
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
def test_barycenter_residual_property(seed, n_comp):
    rng = np.random.default_rng(seed)
    covs = [random_spd(rng, 4) for _ in range(n_comp)]
    u = barycenter_gaussian([GaussianStyle(np.zeros(4), c) for c in covs])
    assert u.residual < 1e-9
    assert np.linalg.eigvalsh(u.cov).min() > 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_average_is_psd(seed):
    rng = np.random.default_rng(seed)
    comps = [GaussianStyle(rng.standard_normal(3), random_spd(rng, 3) - 0.09 * np.eye(3)) for _ in range(3)]
    u = average_clusters(comps)
    assert np.linalg.eigvalsh(u.cov).min() >= -1e-12
