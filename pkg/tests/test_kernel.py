"""
Kernel Tests
Pseudo-marginal transition, limiting kernel and the chain runner
"""

import math
from functools import partial

import numpy as np
import pytest

from pmtune.core import CovarianceMatrix, RngStream
from pmtune.diagnostics import iat_obm
from pmtune.kernel import (
    ChainState,
    LimitingKernelSpec,
    PseudoMarginalModel,
    RandomWalkProposal,
    Trace,
    initialize_chain,
    limiting_step,
    log_accept,
    pm_step,
    run_chain,
    simulate_limiting_chain,
    stationary_init,
)
from pmtune.models import ToyModel, toy_posterior, toy_simulate
from pmtune.utils import EstimatorFailure, InitializationFailure


class StandardNormalTarget(PseudoMarginalModel):
    """N(0, I) posterior with an exact (noise-free) likelihood"""

    def log_prior(self, theta):
        return -0.5 * float(np.sum(np.asarray(theta) ** 2))

    def loglik_hat(self, theta, rng):
        return 0.0


class ConstantEstimate(PseudoMarginalModel):
    """Flat prior on [-1, 1] with a fixed log-estimate"""

    def __init__(self, value):
        self.value = value
        self.calls = 0

    def log_prior(self, theta):
        return 0.0 if abs(float(theta[0])) <= 1.0 else -math.inf

    def loglik_hat(self, theta, rng):
        self.calls += 1
        return self.value


class FlakyEstimate(PseudoMarginalModel):
    """Zero estimates for the first few draws"""

    def __init__(self, zeros):
        self.zeros = zeros
        self.calls = 0

    def log_prior(self, theta):
        return 0.0

    def loglik_hat(self, theta, rng):
        self.calls += 1
        return -math.inf if self.calls <= self.zeros else -1.5


class ExactToyTarget(PseudoMarginalModel):
    """Toy posterior under a flat prior with the exact likelihood"""

    def __init__(self, y):
        self.model = ToyModel(math.inf)
        self.y = y

    def log_prior(self, theta):
        return self.model.log_prior(theta)

    def loglik_hat(self, theta, rng):
        return self.model.exact_loglik(theta, self.y)


@pytest.mark.unit
class TestLogAccept:
    """Test the log acceptance probability"""

    def test_symmetric_no_move(self):
        assert log_accept(0.0, 0.0, 0.3, 0.3) == 0.0

    def test_noise_only(self):
        assert log_accept(0.0, 0.0, -0.5, 0.0) == pytest.approx(-0.5)

    def test_gaussian_ratio(self):
        """theta 0 -> 1 on N(0, 1) with equal noise"""
        ratio = -0.5 * 1.0 ** 2
        assert log_accept(ratio, 0.0, 0.2, 0.2) == pytest.approx(-0.5)

    def test_capped_at_zero(self):
        assert log_accept(3.0, 0.0, 1.0, -2.0) == 0.0

    def test_neg_inf_rejects(self):
        assert log_accept(-math.inf, 0.0, 0.0, 0.0) == -math.inf

    def test_zero_estimate_rejects(self):
        assert log_accept(0.0, 0.0, -math.inf, 0.0) == -math.inf

    def test_large_noise_gap_no_overflow(self):
        assert log_accept(0.0, 0.0, -800.0, 800.0) == pytest.approx(-1600.0)

    def test_nan_raises(self):
        with pytest.raises(ValueError):
            log_accept(math.inf, 0.0, -math.inf, 0.0)


@pytest.mark.unit
class TestRandomWalkProposal:
    """Test proposal covariance scaling"""

    def test_effective_covariance(self):
        base = CovarianceMatrix([[2.0, 0.5], [0.5, 1.0]])
        proposal = RandomWalkProposal(2.0, base)
        assert np.allclose(proposal.effective_cov.entries, 2.0 * base.entries)

    def test_non_positive_ell_rejected(self):
        with pytest.raises(ValueError):
            RandomWalkProposal(0.0, CovarianceMatrix.identity(1))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            RandomWalkProposal(1.0, CovarianceMatrix.identity(2), dim=3)


@pytest.mark.unit
class TestPseudoMarginalStep:
    """Test the pseudo-marginal transition"""

    def setup_method(self):
        self.model = StandardNormalTarget()
        self.state = ChainState(np.array([0.3]), 0.0, self.model.log_prior([0.3]))

    def test_vanishing_move_accepts(self):
        """A 1e-30 step on an exact likelihood is accepted almost always"""
        proposal = RandomWalkProposal(1.0, CovarianceMatrix([[1e-30]]))
        rng = RngStream(1)
        trace = run_chain(
            self.state, partial(pm_step, model=self.model, proposal=proposal, rng=rng), 10_000, burn_in=0
        )
        assert trace.acceptance_rate >= 0.99

    def test_deterministic_trajectory(self):
        proposal = RandomWalkProposal(2.4, CovarianceMatrix.identity(1))

        def run():
            rng = RngStream(5, 2)
            return run_chain(
                self.state, partial(pm_step, model=self.model, proposal=proposal, rng=rng), 500
            )

        a, b = run(), run()
        assert np.array_equal(a.f_values, b.f_values)
        assert np.array_equal(a.accept_flags, b.accept_flags)

    def test_exact_gaussian_acceptance(self):
        """Exact-likelihood random walk on N(0, 1) accepts at (2/pi) arctan(2/ell)"""
        ell = 2.0
        proposal = RandomWalkProposal(ell, CovarianceMatrix.identity(1))
        rng = RngStream(17)
        trace = run_chain(
            self.state, partial(pm_step, model=self.model, proposal=proposal, rng=rng), 20_000
        )
        expected = 2.0 / math.pi * math.atan(2.0 / ell)
        assert abs(trace.acceptance_rate - expected) < 0.03

    def test_rejection_recycles_state(self):
        """A zero estimate is always rejected and the state object is kept"""
        model = ConstantEstimate(-math.inf)
        state = ChainState(np.array([0.0]), -0.4, -0.4)
        proposal = RandomWalkProposal(0.5, CovarianceMatrix.identity(1))
        new, accepted = pm_step(state, model, proposal, RngStream(0))
        assert not accepted
        assert new is state

    def test_prior_zero_skips_estimator(self):
        model = ConstantEstimate(0.0)
        state = ChainState(np.array([0.99]), 0.0, 0.0)
        proposal = RandomWalkProposal(1.0, CovarianceMatrix([[1e6]]))
        rng = RngStream(2)
        for _ in range(50):
            state, _ = pm_step(state, model, proposal, rng)
        assert model.calls < 50

    def test_nan_estimate_raises(self):
        model = ConstantEstimate(math.nan)
        state = ChainState(np.array([0.0]), 0.0, 0.0)
        proposal = RandomWalkProposal(1e-3, CovarianceMatrix.identity(1))
        with pytest.raises(EstimatorFailure):
            pm_step(state, model, proposal, RngStream(0))


@pytest.mark.unit
class TestInitializeChain:
    """Test starting a chain on a real model"""

    def test_retries_until_finite(self):
        model = FlakyEstimate(zeros=3)
        state = initialize_chain(model, [0.1], RngStream(0))
        assert model.calls == 4
        assert state.z == -1.5
        assert math.isfinite(state.log_post_hat)

    def test_gives_up(self):
        with pytest.raises(InitializationFailure):
            initialize_chain(FlakyEstimate(zeros=1000), [0.1], RngStream(0), max_attempts=10)

    def test_zero_prior(self):
        with pytest.raises(InitializationFailure):
            initialize_chain(ConstantEstimate(0.0), [5.0], RngStream(0))

    def test_nan_estimate(self):
        with pytest.raises(EstimatorFailure):
            initialize_chain(ConstantEstimate(math.nan), [0.0], RngStream(0))


@pytest.mark.unit
class TestRunChain:
    """Test the chain runner and traces"""

    def setup_method(self):
        self.spec = LimitingKernelSpec(2.0, 1.0)
        self.stepper = partial(limiting_step, spec=self.spec, rng=RngStream(3))
        self.init = stationary_init(self.spec, RngStream(4))

    def test_empty_trace(self):
        trace = run_chain(self.init, self.stepper, 0)
        assert len(trace) == 0
        assert math.isnan(trace.acceptance_rate)

    def test_constant_test_function(self):
        trace = run_chain(self.init, self.stepper, 100, f=lambda theta, z: 7.0)
        assert np.all(trace.f_values == 7.0)

    def test_negative_m_rejected(self):
        with pytest.raises(ValueError):
            run_chain(self.init, self.stepper, -1)

    def test_trace_length_mismatch(self):
        with pytest.raises(ValueError):
            Trace(np.zeros(3), np.zeros(2, dtype=bool))

    def test_alternating_flags(self):
        flags = np.array([True, False] * 50)
        assert Trace(np.zeros(100), flags).acceptance_rate == 0.5

    def test_coordinate_access(self):
        trace = Trace(np.arange(6.0).reshape(3, 2), np.ones(3, dtype=bool))
        assert trace.n_coordinates == 2
        assert np.array_equal(trace.coordinate(1), [1.0, 3.0, 5.0])


@pytest.mark.unit
class TestLimitingKernel:
    """Test the limiting kernel and its stationary law"""

    def test_zero_noise_keeps_z_zero(self):
        spec = LimitingKernelSpec(2.0, 0.0)
        rng = RngStream(6)
        state = stationary_init(spec, rng)
        assert state.z == 0.0
        for _ in range(200):
            state, _ = limiting_step(state, spec, rng)
            assert state.z == 0.0

    def test_infinite_sigma_rejected(self):
        with pytest.raises(ValueError):
            LimitingKernelSpec(2.0, math.inf)

    def test_stationary_noise_mean(self):
        """z ~ N(+sigma^2/2, sigma^2) at stationarity"""
        spec = LimitingKernelSpec(1.0, 2.0)
        rng = RngStream(12)
        z = np.array([stationary_init(spec, rng).z for _ in range(20_000)])
        se = 2.0 / math.sqrt(z.size)
        assert abs(z.mean() - 2.0) < 3.0 * se

    def test_stationary_theta_covariance(self):
        Sigma = CovarianceMatrix([[2.0, 0.6], [0.6, 1.0]])
        spec = LimitingKernelSpec(2.0, 1.0, Sigma)
        rng = RngStream(13)
        draws = np.array([stationary_init(spec, rng).theta for _ in range(20_000)])
        assert np.allclose(np.cov(draws, rowvar=False), Sigma.entries, rtol=0.05, atol=0.03)

    def test_proposal_noise_exp_mean_one(self):
        """exp(z') averages to 1 for z' ~ N(-sigma^2/2, sigma^2)"""
        sigma = 1.0
        z = sigma * RngStream(14).standard_normal(1_000_000) - 0.5 * sigma ** 2
        w = np.exp(z)
        se = float(np.std(w)) / math.sqrt(w.size)
        assert abs(float(w.mean()) - 1.0) < 4.0 * se

    def test_table_acceptance_d1(self):
        """ell = 2.05, sigma = 1.16 accepts about 25.7% of proposals"""
        spec = LimitingKernelSpec(2.05, 1.16)
        trace = simulate_limiting_chain(spec, 200_000, RngStream(15))
        assert abs(trace.acceptance_rate - 0.2573) < 0.015

    def test_fast_path_matches_stepwise(self):
        spec = LimitingKernelSpec(2.0, 1.2)
        fast = simulate_limiting_chain(spec, 40_000, RngStream(16))
        rng = RngStream(17)
        slow = run_chain(stationary_init(spec, rng), partial(limiting_step, spec=spec, rng=rng), 20_000)
        assert abs(fast.acceptance_rate - slow.acceptance_rate) < 0.02

    def test_fast_path_deterministic(self):
        spec = LimitingKernelSpec(2.2, 1.4, dim=3)
        a = simulate_limiting_chain(spec, 5_000, RngStream(18), all_coordinates=True)
        b = simulate_limiting_chain(spec, 5_000, RngStream(18), all_coordinates=True)
        assert np.array_equal(a.f_values, b.f_values)
        assert a.f_values.shape == (5_000, 3)

    def test_stationary_variance_preserved(self):
        """Variance of theta_1 along the chain matches Sigma_11"""
        Sigma = CovarianceMatrix([[2.0, 0.5], [0.5, 1.0]])
        spec = LimitingKernelSpec(2.0, 1.0, Sigma)
        trace = simulate_limiting_chain(spec, 400_000, RngStream(19))
        assert abs(float(np.var(trace.f_values)) - 2.0) < 0.05 * 2.0

    def test_stationary_z_mean_along_chain(self):
        sigma = 1.5
        spec = LimitingKernelSpec(2.0, sigma)
        trace = simulate_limiting_chain(spec, 200_000, RngStream(20), record_z=True)
        estimate = iat_obm(trace.z_values)
        se = math.sqrt(estimate.asymp_var / estimate.n)
        assert abs(float(np.mean(trace.z_values)) - 0.5 * sigma ** 2) < 4.0 * se

    def test_invariance_after_few_steps(self):
        """Independent chains started at stationarity stay stationary"""
        spec = LimitingKernelSpec(2.0, 1.0)
        thetas, zs = [], []
        for i in range(2000):
            rng = RngStream(21, i)
            state = stationary_init(spec, rng)
            for _ in range(10):
                state, _ = limiting_step(state, spec, rng)
            thetas.append(state.theta[0])
            zs.append(state.z)
        thetas, zs = np.array(thetas), np.array(zs)
        n = len(thetas)
        assert abs(thetas.mean()) < 4.0 / math.sqrt(n)
        assert abs(thetas.var() - 1.0) < 4.0 * math.sqrt(2.0 / n)
        assert abs(zs.mean() - 0.5) < 4.0 / math.sqrt(n)


@pytest.mark.slow
class TestLimitingKernelLongRun:
    """Long-run checks at a million steps"""

    def test_stationary_z_mean_million_steps(self):
        sigma = 1.0
        spec = LimitingKernelSpec(2.0, sigma)
        trace = simulate_limiting_chain(spec, 1_000_000, RngStream(30), record_z=True)
        estimate = iat_obm(trace.z_values)
        se = math.sqrt(estimate.asymp_var / estimate.n)
        assert abs(float(np.mean(trace.z_values)) - 0.5) < 3.0 * se


@pytest.mark.slow
class TestToyChainAcceptance:
    """Long exact-likelihood chains on the toy posterior"""

    @pytest.mark.parametrize("ell,expected", [(2.0, 0.50), (2.4, 0.44)])
    def test_acceptance_rate(self, ell, expected):
        """Random walk scaled to the posterior sd accepts at (2/pi) arctan(2/ell)"""
        y = toy_simulate(0.5, 20, RngStream(40, 0))
        post_mean, post_var = toy_posterior(y, math.inf)
        target = ExactToyTarget(y)
        rng = RngStream(40, 1)
        state = initialize_chain(target, post_mean, rng)
        proposal = RandomWalkProposal(ell, CovarianceMatrix([[post_var]]))
        trace = run_chain(state, partial(pm_step, model=target, proposal=proposal, rng=rng), 100_000)
        assert abs(trace.acceptance_rate - expected) <= 0.03


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
