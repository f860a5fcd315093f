"""
Asymptotic Check Tests
Noise statistics against the Gaussian limit and Bernstein-von Mises distances
"""

import math

import numpy as np
import pytest

from pmtune.clt_checks import bvm_report, noise_clt_report, noise_clt_spot_check, noise_statistics
from pmtune.models import ToyModel


class ExactModel:
    """Estimator with no noise: every weight equals the likelihood"""

    def log_weights(self, theta, data, N, rng, proposal=None):
        return np.zeros((len(data), N))

    def exact_loglik(self, theta, data):
        return 0.0


def zeros(T, rng):
    return np.zeros(T)


@pytest.mark.unit
class TestNoiseStatistics:
    """Test summaries of noise draws"""

    def test_exact_estimator_all_zero(self):
        row = noise_statistics(np.zeros(100), 10, 10)
        assert row.var_z == 0.0
        assert row.mean_plus_half_var == 0.0
        assert row.ks_to_gaussian == 0.0
        assert row.unbiasedness_dev == 0.0
        assert row.ess == 100.0

    def test_gaussian_limit_draws(self):
        """Draws from N(-1/2, 1) sit close to the limit"""
        rng = np.random.default_rng(3)
        row = noise_statistics(rng.normal(-0.5, 1.0, 20_000), 100, 100)
        assert row.mean_plus_half_var < 0.05
        assert row.ks_to_gaussian < 0.02
        assert row.stationary_dev < 0.15
        assert row.ess >= row.ess_floor * 0.5

    def test_zero_estimates_counted(self):
        z = np.array([-math.inf, 0.1, -0.2, 0.3])
        assert noise_statistics(z, 5, 5).n_zero == 1

    def test_needs_two_finite_draws(self):
        with pytest.raises(ValueError):
            noise_statistics(np.array([-math.inf, 0.0]), 5, 5)


@pytest.mark.unit
class TestNoiseCltReport:
    """Test the per-T noise report"""

    def test_exact_model_report(self):
        report = noise_clt_report(ExactModel(), 0.0, [5, 20], reps=50, simulate=zeros)
        assert [row.T for row in report.rows] == [5, 20]
        assert all(row.mean_plus_half_var == 0.0 for row in report.rows)

    def test_sample_size_rounds_up(self):
        report = noise_clt_report(ExactModel(), 0.0, [7], gamma=0.5, reps=10, simulate=zeros)
        assert report.rows[0].N == 4

    def test_invalid_gamma(self):
        with pytest.raises(ValueError):
            noise_clt_report(ExactModel(), 0.0, [5], gamma=0.0, simulate=zeros)

    def test_toy_unbiased(self):
        report = noise_clt_report(ToyModel(), 0.5, [25, 100], reps=2000, seed=1)
        for row in report.rows:
            assert row.unbiasedness_dev <= 4.0 * row.unbiasedness_se

    def test_frame_has_theta_column(self):
        frame = noise_clt_report(ToyModel(), 0.5, [10], reps=20).to_frame()
        assert frame.columns[0] == "theta"
        assert frame["N"].iloc[0] == 10

    def test_reproducible(self):
        a = noise_clt_report(ToyModel(), 0.5, [10], reps=30, seed=4).as_dict()
        b = noise_clt_report(ToyModel(), 0.5, [10], reps=30, seed=4).as_dict()
        assert a == b

    def test_spot_check_grid(self):
        frame = noise_clt_spot_check(ToyModel(), 0.5, 16, reps=20, delta=2.0)
        assert len(frame) == 5
        assert np.allclose(np.diff(frame["theta"]), 0.5)


@pytest.mark.slow
class TestNoiseCltTrend:
    """The Gaussian-limit mean deviation shrinks as T grows"""

    def test_mean_deviation_decreases(self):
        deviations = {25: [], 400: []}
        for seed in range(5):
            report = noise_clt_report(ToyModel(), 0.5, [25, 400], reps=2000, seed=seed)
            for row in report.rows:
                deviations[row.T].append(row.mean_plus_half_var)
        assert np.median(deviations[400]) < np.median(deviations[25])


@pytest.mark.unit
class TestBvm:
    """Test the posterior-to-Gaussian distance of the toy model"""

    def test_flat_prior_exact(self):
        rows = bvm_report(math.inf, 0.5, [10, 100, 1000])
        assert all(row.tv == 0.0 for row in rows)

    def test_unit_prior_decreases(self):
        rows = bvm_report(1.0, 0.5, [10, 100, 1000], seed=2)
        assert rows[-1].tv < rows[0].tv

    def test_unit_prior_large_T(self):
        assert bvm_report(1.0, 0.5, [10_000], seed=2)[0].tv < 0.01

    def test_empty_list(self):
        assert bvm_report(1.0, 0.5, []) == []

    def test_invalid_size(self):
        with pytest.raises(ValueError):
            bvm_report(1.0, 0.5, [0])

    def test_tv_is_half_l1(self):
        row = bvm_report(1.0, 0.5, [50])[0]
        assert row.tv == pytest.approx(0.5 * row.l1)
        assert 0.0 <= row.tv <= 1.0


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
