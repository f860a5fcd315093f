"""
Model Tests
Toy Gaussian model, exponential families and the random-intercept GLMM
"""

import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from pmtune.core import RngStream
from pmtune.estimators import IsProposal, find_modes
from pmtune.models import (
    ClusterObs,
    ExpFamilySpec,
    GlmmData,
    GlmmModel,
    GlmmParams,
    ToyModel,
    glmm_cluster_logweight,
    make_design,
    toy_exact_loglik,
    toy_is_logweight,
    toy_posterior,
    toy_simulate,
)


@pytest.mark.unit
class TestToyModel:
    """Test the Gaussian toy model"""

    def test_loglik_single_observation_at_mode(self):
        assert toy_exact_loglik(0.7, [0.7]) == pytest.approx(-1.2655121, abs=1e-7)

    def test_loglik_empty(self):
        assert toy_exact_loglik(0.3, []) == 0.0

    def test_loglik_two_observations(self):
        assert toy_exact_loglik(1.0, [0.0, 2.0]) == pytest.approx(-3.0310242, abs=1e-7)

    def test_posterior_flat_prior_is_sample_mean(self):
        mean, _ = toy_posterior([1.0, 3.0], 1e10)
        assert mean == pytest.approx(2.0, abs=1e-8)

    def test_posterior_unit_precision(self):
        assert toy_posterior([0.0], 2.0) == pytest.approx((0.0, 1.0))

    def test_posterior_without_data(self):
        assert toy_posterior([], 3.0) == (0.0, 3.0)

    def test_posterior_rejects_bad_prior(self):
        with pytest.raises(ValueError):
            toy_posterior([1.0], 0.0)

    def test_logweight_at_matching_residual(self):
        assert toy_is_logweight(0.5, 1.5, 1.0) == pytest.approx(-0.9189385, abs=1e-7)

    def test_logweight_depends_on_residual_only(self):
        assert toy_is_logweight(0.2, 1.0, 0.3) == pytest.approx(toy_is_logweight(1.2, 2.0, 0.3))

    def test_logweight_unbiased(self):
        """E_u exp(logweight) equals the N(theta, 2) density at y"""
        u = RngStream(4).standard_normal(1_000_000)
        w = np.exp(toy_is_logweight(0.5, 1.7, u))
        exact = math.exp(toy_exact_loglik(0.5, [1.7]))
        se = w.std(ddof=1) / math.sqrt(w.size)
        assert abs(w.mean() - exact) < 3.0 * se

    def test_simulate_moments(self):
        y = toy_simulate(0.5, 1_000_000, RngStream(5))
        assert 1.98 <= float(np.var(y)) <= 2.02
        assert abs(float(np.mean(y)) - 0.5) < 0.01

    def test_simulate_deterministic(self):
        assert np.array_equal(toy_simulate(0.5, 20, RngStream(6)), toy_simulate(0.5, 20, RngStream(6)))

    def test_log_weights_shape(self):
        log_w = ToyModel().log_weights(0.0, np.zeros(7), 3, RngStream(0))
        assert log_w.shape == (7, 3)

    def test_prior_density(self):
        assert ToyModel(sigma0_sq=1.0).log_prior(0.0) == pytest.approx(-0.9189385, abs=1e-7)


@pytest.mark.unit
class TestExpFamily:
    """Test binomial and Poisson log-partition functions"""

    def test_logistic_loglik_at_zero(self):
        assert ExpFamilySpec.binomial().loglik(1.0, 0.0) == pytest.approx(-math.log(2.0))

    def test_poisson_loglik_at_zero(self):
        assert ExpFamilySpec.poisson().loglik(2.0, 0.0) == pytest.approx(-1.6931472, abs=1e-7)

    def test_binomial_mean_bounded(self):
        expfam = ExpFamilySpec.binomial(3)
        assert expfam.sup_mean == 3.0
        assert float(expfam.A1(50.0)) == pytest.approx(3.0)

    def test_poisson_unbounded(self):
        assert ExpFamilySpec.poisson().sup_mean == math.inf

    def test_derivatives_match_finite_differences(self):
        expfam = ExpFamilySpec.binomial(2)
        h = 1e-5
        for eta in (-1.5, 0.0, 0.8):
            assert float(expfam.A1(eta)) == pytest.approx(
                float(expfam.A(eta + h) - expfam.A(eta - h)) / (2 * h), rel=1e-6
            )
            assert float(expfam.A2(eta)) == pytest.approx(
                float(expfam.A1(eta + h) - expfam.A1(eta - h)) / (2 * h), rel=1e-6
            )

    def test_from_name(self):
        assert ExpFamilySpec.from_name("logistic").n_trials == 1
        with pytest.raises(ValueError):
            ExpFamilySpec.from_name("gamma")

    def test_binomial_needs_trials(self):
        with pytest.raises(ValueError):
            ExpFamilySpec.binomial(0)


@pytest.mark.unit
class TestGlmmWeights:
    """Test the per-cluster importance weight"""

    def test_weight_at_mode(self):
        """At the mode with tau_q = tau the weight is h(x_hat) / q(x_hat)"""
        expfam = ExpFamilySpec.poisson()
        cluster = ClusterObs(y=[2.0], covariates=[[1.0]])
        params = GlmmParams(beta=[0.0], tau=1.0)
        x_hat = find_modes(np.zeros((1, 1)), np.array([2.0]), 1.0, expfam)[0]
        value = glmm_cluster_logweight(cluster, params, x_hat, IsProposal.gaussian(), expfam)
        expected = float(expfam.loglik(2.0, x_hat)) - 0.5 * x_hat ** 2
        assert value == pytest.approx(expected)

    def test_vector_input(self):
        cluster = ClusterObs(y=[1.0, 0.0], covariates=np.ones((2, 1)))
        params = GlmmParams(beta=[0.1], tau=0.5)
        values = glmm_cluster_logweight(
            cluster, params, np.array([0.0, 0.5]), IsProposal.gaussian(), ExpFamilySpec.binomial()
        )
        assert values.shape == (2,)

    def test_model_weights_shape(self):
        model = GlmmModel(ExpFamilySpec.binomial(), np.ones((4, 1)), beta=[0.0], tau=1.0)
        data = model.simulate(6, RngStream(1))
        assert model.log_weights(model.params.to_vector(), data, 5, RngStream(2)).shape == (6, 5)

    def test_params_vector_round_trip(self):
        params = GlmmParams(beta=[0.1, -0.2], tau=0.9)
        again = GlmmParams.from_vector(params.to_vector())
        assert np.allclose(again.beta, params.beta) and again.tau == 0.9
        assert params.dim == 3


@pytest.mark.unit
class TestGlmmQuadrature:
    """Test the quadrature marginal likelihood"""

    def test_matches_direct_integration(self):
        """Gauss-Hermite against a dense trapezoid rule for one cluster"""
        expfam = ExpFamilySpec.binomial()
        design = np.column_stack([np.ones(4), [0.3, -0.5, 1.1, 0.0]])
        data = GlmmData(np.array([[1.0, 0.0, 1.0, 1.0]]), design[None, :, :])
        model = GlmmModel(expfam)
        theta = np.array([0.2, -0.3, 1.4])
        offsets = design @ theta[:2]
        x = np.linspace(-15.0, 15.0, 200_001)
        log_g = np.sum(expfam.loglik(data.y[0][:, None], offsets[:, None] + x[None, :]), axis=0)
        integrand = np.exp(log_g) * np.exp(-x ** 2 / (2 * 1.4 ** 2)) / math.sqrt(2 * math.pi * 1.4 ** 2)
        direct = math.log(trapezoid(integrand, x))
        assert model.exact_loglik(theta, data) == pytest.approx(direct, abs=1e-7)

    def test_empty_data(self):
        data = GlmmData(np.zeros((0, 2)), np.zeros((0, 2, 1)))
        assert GlmmModel(ExpFamilySpec.poisson()).exact_loglik([0.0, 1.0], data) == 0.0

    def test_is_estimate_unbiased_on_small_clusters(self):
        """Mean of exp(log p_hat) over replicates matches the quadrature likelihood"""
        expfam = ExpFamilySpec.binomial()
        model = GlmmModel(expfam, proposal=IsProposal.student_t(5.0))
        rng = RngStream(12)
        for t in range(5):
            J = 1 + t % 4
            design = np.column_stack([np.ones(J), rng.standard_normal(J)])[None, :, :]
            data = GlmmData(rng.binomial(1, 0.5, (1, J)).astype(float), design)
            theta = np.array([0.1, 0.3, 0.9])
            log_w = model.log_weights(theta, data, 20_000, rng)[0]
            exact = math.exp(model.exact_loglik(theta, data))
            w = np.exp(log_w)
            se = w.std(ddof=1) / math.sqrt(w.size)
            assert abs(w.mean() - exact) <= 4.0 * se


@pytest.mark.unit
class TestGlmmSimulation:
    """Test data simulation and serialisation"""

    def test_logistic_marginal_half(self):
        model = GlmmModel(ExpFamilySpec.binomial(), np.ones((1, 1)), beta=[0.0], tau=1e-8)
        y = model.simulate(100_000, RngStream(7)).y.ravel()
        se = 0.5 / math.sqrt(y.size)
        assert abs(y.mean() - 0.5) < 3.0 * se

    def test_poisson_lognormal_mean(self):
        model = GlmmModel(ExpFamilySpec.poisson(), np.ones((1, 1)), beta=[0.0], tau=1.0)
        y = model.simulate(100_000, RngStream(8)).y.ravel()
        se = y.std(ddof=1) / math.sqrt(y.size)
        assert abs(y.mean() - math.exp(0.5)) < 3.0 * se

    def test_design_shape_and_intercept(self):
        design = make_design(10, 4, 3, RngStream(9))
        assert design.shape == (10, 4, 3)
        assert np.all(design[:, :, 0] == 1.0)
        assert abs(float(design[:, :, 1].mean())) < 1e-12

    def test_per_cluster_design_must_match_T(self):
        model = GlmmModel(ExpFamilySpec.poisson(), np.ones((3, 2, 1)), beta=[0.0], tau=1.0)
        with pytest.raises(ValueError):
            model.simulate(4, RngStream(0))

    def test_simulation_needs_parameters(self):
        with pytest.raises(ValueError):
            GlmmModel(ExpFamilySpec.poisson(), np.ones((2, 1))).simulate(3, RngStream(0))

    def test_csv_round_trip(self, tmp_path):
        design = make_design(5, 3, 2, RngStream(10))
        model = GlmmModel(ExpFamilySpec.binomial(), design, beta=[0.2, -0.1], tau=0.7)
        data = model.simulate(5, RngStream(11))
        path = data.to_csv(tmp_path / "glmm.csv")
        again = GlmmData.from_csv(path)
        assert np.array_equal(again.y, data.y)
        assert np.allclose(again.covariates, data.covariates, rtol=1e-14, atol=0)

    def test_csv_columns(self, tmp_path):
        data = GlmmData(np.zeros((2, 2)), np.ones((2, 2, 2)))
        frame = data.to_frame()
        assert list(frame.columns) == ["cluster_id", "obs_index", "y", "x0", "x1"]

    def test_incomplete_grid_rejected(self):
        frame = GlmmData(np.zeros((2, 2)), np.ones((2, 2, 1))).to_frame().iloc[:3]
        with pytest.raises(ValueError):
            GlmmData.from_frame(frame)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
