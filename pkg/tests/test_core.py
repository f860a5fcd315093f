"""
Core Numerics Tests
Random streams, Cholesky factorisation, Gaussian evaluation and log-space reductions
"""

import math

import numpy as np
import pytest

from pmtune.core import (
    CovarianceMatrix,
    GaussianSpec,
    RngStream,
    cholesky_factor,
    logsumexp,
    mvn_logpdf,
    mvn_sample,
    sample_covariance,
)
from pmtune.utils import NotPositiveDefinite


@pytest.mark.unit
class TestRngStream:
    """Test reproducible stream addressing"""

    def test_same_key_same_draws(self):
        a = RngStream(42, (3, 1)).standard_normal(100)
        b = RngStream(42, (3, 1)).standard_normal(100)
        assert np.array_equal(a, b)

    def test_distinct_ids_differ(self):
        a = RngStream(42, 0).standard_normal(100)
        b = RngStream(42, 1).standard_normal(100)
        assert not np.array_equal(a, b)

    def test_int_and_tuple_ids_agree(self):
        """A bare integer id is the one-element tuple id"""
        assert np.array_equal(RngStream(7, 5).random(10), RngStream(7, (5,)).random(10))

    def test_child_extends_key(self):
        parent = RngStream(1, (2,))
        assert parent.child(3).stream_id == (2, 3)
        assert np.array_equal(parent.child(3).random(5), RngStream(1, (2, 3)).random(5))

    def test_independent_streams_equidistributed(self):
        """Pooled uniforms from many streams fill ten bins evenly"""
        draws = np.concatenate([RngStream(9, i).random(1000) for i in range(20)])
        counts, _ = np.histogram(draws, bins=10, range=(0.0, 1.0))
        expected = draws.size / 10
        chi2 = float(np.sum((counts - expected) ** 2 / expected))
        assert chi2 < 30.0

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            RngStream(-1)

    def test_log_uniform_non_positive(self):
        assert np.all(RngStream(0).log_uniform(1000) <= 0.0)


@pytest.mark.unit
class TestCholesky:
    """Test Cholesky factorisation and its failure modes"""

    def test_identity(self):
        assert np.allclose(cholesky_factor(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        L = cholesky_factor([[4.0, 0.0], [0.0, 9.0]])
        assert np.allclose(L, [[2.0, 0.0], [0.0, 3.0]])

    def test_dense_reconstructs(self):
        """[[2,1],[1,2]] factors to the known lower triangle"""
        S = np.array([[2.0, 1.0], [1.0, 2.0]])
        L = cholesky_factor(S)
        assert np.allclose(L, [[1.414214, 0.0], [0.707107, 1.224745]], atol=1e-6)
        assert np.max(np.abs(L @ L.T - S)) <= 1e-10

    def test_positive_diagonal(self):
        S = np.array([[3.0, 0.5, 0.1], [0.5, 2.0, 0.3], [0.1, 0.3, 1.0]])
        assert np.all(np.diag(cholesky_factor(S)) > 0)

    def test_singular_matrix_fails(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_factor([[1.0, 1.0], [1.0, 1.0]])

    def test_indefinite_matrix_fails(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_factor([[1.0, 2.0], [2.0, 1.0]])

    def test_tiny_uniform_scale_factors(self):
        """A vanishing but well-conditioned covariance still factors"""
        L = cholesky_factor(1e-30 * np.eye(2))
        assert np.allclose(L, 1e-15 * np.eye(2), rtol=1e-10, atol=0.0)

    def test_asymmetric_rejected(self):
        with pytest.raises(ValueError):
            cholesky_factor([[1.0, 0.5], [0.0, 1.0]])

    def test_non_finite_fails(self):
        with pytest.raises(NotPositiveDefinite):
            cholesky_factor([[np.nan, 0.0], [0.0, 1.0]])


@pytest.mark.unit
class TestCovarianceMatrix:
    """Test the cached-factor covariance wrapper"""

    def test_log_det(self):
        cov = CovarianceMatrix([[4.0, 0.0], [0.0, 9.0]])
        assert cov.log_det == pytest.approx(math.log(36.0))

    def test_scaled_reuses_factor(self):
        cov = CovarianceMatrix([[2.0, 1.0], [1.0, 2.0]])
        _ = cov.chol
        scaled = cov.scaled(4.0)
        assert np.allclose(scaled.chol, 2.0 * cov.chol)
        assert np.allclose(scaled.entries, 4.0 * cov.entries)

    def test_scaled_rejects_non_positive(self):
        with pytest.raises(ValueError):
            CovarianceMatrix.identity(2).scaled(0.0)

    def test_solve_lower(self):
        cov = CovarianceMatrix([[4.0, 2.0], [2.0, 3.0]])
        b = np.array([1.0, 2.0])
        assert np.allclose(cov.chol @ cov.solve_lower(b), b)

    def test_sample_covariance_symmetric(self):
        samples = RngStream(3).standard_normal((500, 3))
        cov = sample_covariance(samples)
        assert cov.dim == 3
        assert np.array_equal(cov.entries, cov.entries.T)

    def test_sample_covariance_needs_two_rows(self):
        with pytest.raises(ValueError):
            sample_covariance(np.zeros((1, 2)))


@pytest.mark.unit
class TestGaussian:
    """Test Gaussian log-density and sampling"""

    def test_standard_normal_at_zero(self):
        spec = GaussianSpec([0.0], CovarianceMatrix([[1.0]]))
        assert mvn_logpdf([0.0], spec) == pytest.approx(-0.9189385, abs=1e-7)

    def test_standard_normal_at_one(self):
        spec = GaussianSpec([0.0], CovarianceMatrix([[1.0]]))
        assert mvn_logpdf([1.0], spec) == pytest.approx(-1.4189385, abs=1e-7)

    def test_bivariate_at_origin(self):
        spec = GaussianSpec([0.0, 0.0], CovarianceMatrix.identity(2))
        assert mvn_logpdf([0.0, 0.0], spec) == pytest.approx(-1.8378771, abs=1e-7)

    def test_batch_matches_pointwise(self):
        spec = GaussianSpec([1.0, -1.0], CovarianceMatrix([[2.0, 0.3], [0.3, 1.0]]))
        x = RngStream(5).standard_normal((4, 2))
        batch = mvn_logpdf(x, spec)
        assert np.allclose(batch, [mvn_logpdf(row, spec) for row in x])

    def test_density_integrates_to_one(self):
        """Gauss-Hermite quadrature of the 1-d density"""
        spec = GaussianSpec([0.7], CovarianceMatrix([[2.5]]))
        nodes, weights = np.polynomial.hermite.hermgauss(60)
        x = 0.7 + math.sqrt(2.0 * 2.5) * nodes
        density = np.exp(mvn_logpdf(x[:, None], spec) + nodes ** 2)
        total = math.sqrt(2.0 * 2.5) * float(np.sum(weights * density))
        assert abs(total - 1.0) < 1e-8

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            GaussianSpec([0.0, 0.0], CovarianceMatrix.identity(3))

    def test_sample_deterministic(self):
        spec = GaussianSpec([1.0, 2.0], CovarianceMatrix.identity(2))
        a = mvn_sample(spec, RngStream(11, 4))
        b = mvn_sample(spec, RngStream(11, 4))
        assert np.array_equal(a, b)

    def test_degenerate_covariance_draws_mean(self):
        spec = GaussianSpec([3.0, -2.0], CovarianceMatrix.diagonal([1e-30, 1e-30]))
        draw = mvn_sample(spec, RngStream(0))
        assert np.allclose(draw, [3.0, -2.0], atol=1e-12)

    def test_sample_moments(self):
        """Variance of 10^6 draws with sigma^2 = 4 lies in [3.96, 4.04]"""
        spec = GaussianSpec([0.0], CovarianceMatrix([[4.0]]))
        draws = mvn_sample(spec, RngStream(21), size=1_000_000)[:, 0]
        assert 3.96 <= float(np.var(draws)) <= 4.04
        assert abs(float(np.mean(draws))) < 4.0 * 2.0 / 1000.0


@pytest.mark.unit
class TestLogSumExp:
    """Test the stable log-sum-exp reduction"""

    def test_two_zeros(self):
        assert logsumexp([0.0, 0.0]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_large_negative(self):
        assert logsumexp([-1000.0, -1000.0]) == pytest.approx(-999.3068528, abs=1e-7)

    def test_singleton(self):
        assert logsumexp([0.0]) == 0.0

    def test_all_neg_inf(self):
        assert logsumexp([-math.inf, -math.inf]) == -math.inf

    def test_shift_equivariance(self):
        v = RngStream(8).standard_normal(50) * 30.0
        assert logsumexp(v + 123.4) == pytest.approx(logsumexp(v) + 123.4, abs=1e-12)

    def test_axis_reduction(self):
        v = np.log(np.array([[1.0, 3.0], [2.0, 2.0]]))
        assert np.allclose(logsumexp(v, axis=1), np.log([4.0, 4.0]))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            logsumexp([])


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
