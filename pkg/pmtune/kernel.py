"""
Markov Kernels
Pseudo-marginal Metropolis-Hastings transition, the limiting noisy kernel
on a Gaussian target, and the chain runner that produces traces
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np

from .core import CovarianceMatrix, GaussianSpec, RngStream, mvn_logpdf, mvn_sample
from .utils import EstimatorFailure, InitializationFailure

logger = logging.getLogger(__name__)

# Steps per block of pre-drawn randomness in the limiting-chain fast path
CHUNK_SIZE = 65536
MAX_INIT_ATTEMPTS = 100


@dataclass(frozen=True)
class ChainState:
    """
    Current point of a pseudo-marginal chain

    theta is the parameter, z the log-likelihood-estimate noise (or the cached
    log-estimate when no reference likelihood is tracked) and log_post_hat the
    cached unnormalised log-posterior estimate. A rejected proposal returns the
    very same object, so z is recycled unchanged.
    """
    theta: np.ndarray
    z: float
    log_post_hat: float

    @property
    def dim(self) -> int:
        return int(np.size(self.theta))


class PseudoMarginalModel(ABC):
    """
    Target with an unbiased non-negative likelihood estimator

    Subclasses return log-scale estimates; -inf encodes a zero estimate and
    NaN is a model bug. When track_noise is True, exact_loglik must be
    available and ChainState.z becomes log p_hat - log p.
    """

    track_noise: bool = False

    @abstractmethod
    def log_prior(self, theta: np.ndarray) -> float:
        """Log prior density (may be -inf outside the support)"""

    @abstractmethod
    def loglik_hat(self, theta: np.ndarray, rng: RngStream) -> float:
        """Log of a fresh unbiased likelihood estimate"""

    def exact_loglik(self, theta: np.ndarray) -> Optional[float]:
        return None

    def reference_loglik(self, theta: np.ndarray) -> float:
        if not self.track_noise:
            return 0.0
        exact = self.exact_loglik(theta)
        if exact is None:
            raise NotImplementedError(
                f"{type(self).__name__} tracks noise but has no exact log-likelihood"
            )
        return float(exact)


def log_accept(
    log_target_ratio: float,
    log_q_ratio: float,
    z_prop: float,
    z_cur: float,
) -> float:
    """
    Log acceptance probability min(0, log r + z' - z)

    Args:
        log_target_ratio: log pi(theta') - log pi(theta); -inf forces rejection
        log_q_ratio: log q(theta', theta) - log q(theta, theta')
        z_prop: Noise at the proposal (-inf for a zero estimate)
        z_cur: Noise at the current state

    Returns:
        Value in [-inf, 0]
    """
    total = log_target_ratio + log_q_ratio + z_prop - z_cur
    if math.isnan(total):
        raise ValueError(
            f"undefined acceptance ratio from ({log_target_ratio}, {log_q_ratio}, "
            f"{z_prop}, {z_cur})"
        )
    return min(0.0, total)


@dataclass
class RandomWalkProposal:
    """Gaussian random walk with covariance ell^2 * base_cov / dim"""
    ell: float
    base_cov: CovarianceMatrix
    dim: Optional[int] = None

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if self.dim is None:
            self.dim = self.base_cov.dim
        if self.dim != self.base_cov.dim:
            raise ValueError(f"dim {self.dim} != covariance dim {self.base_cov.dim}")

    @cached_property
    def effective_cov(self) -> CovarianceMatrix:
        return self.base_cov.scaled(self.ell ** 2 / self.dim)

    def propose(self, theta: np.ndarray, rng: RngStream) -> np.ndarray:
        return theta + self.effective_cov.chol @ rng.standard_normal(self.dim)

    def log_q_ratio(self, theta: np.ndarray, theta_prop: np.ndarray) -> float:
        return 0.0


def pm_step(
    state: ChainState,
    model: PseudoMarginalModel,
    proposal: RandomWalkProposal,
    rng: RngStream,
) -> Tuple[ChainState, bool]:
    """
    One pseudo-marginal Metropolis-Hastings transition

    A fresh likelihood estimate is drawn at every proposal; the current
    estimate is never refreshed.

    Returns:
        (next state, accepted); on rejection the input state object itself

    Raises:
        EstimatorFailure: if the estimator returns NaN
    """
    theta_prop = proposal.propose(state.theta, rng)
    log_prior_prop = model.log_prior(theta_prop)
    if log_prior_prop == -math.inf:
        return state, False

    loglik_prop = model.loglik_hat(theta_prop, rng)
    if math.isnan(loglik_prop):
        raise EstimatorFailure(f"estimator returned NaN at theta={theta_prop}")

    reference = model.reference_loglik(theta_prop)
    z_prop = loglik_prop - reference
    log_target_ratio = (log_prior_prop + reference) - (state.log_post_hat - state.z)
    log_alpha = log_accept(
        log_target_ratio,
        proposal.log_q_ratio(state.theta, theta_prop),
        z_prop,
        state.z,
    )

    if rng.log_uniform() < log_alpha:
        return ChainState(theta_prop, z_prop, log_prior_prop + loglik_prop), True
    return state, False


@dataclass
class LimitingKernelSpec:
    """
    Noisy limiting kernel on the target N(0, Sigma)

    Proposal noise is N(-sigma^2/2, sigma^2); stationary noise is
    N(+sigma^2/2, sigma^2).
    """
    ell: float
    sigma: float
    Sigma: Optional[CovarianceMatrix] = None
    dim: int = 1

    def __post_init__(self):
        if not self.ell > 0:
            raise ValueError(f"ell must be positive, got {self.ell}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be finite and >= 0, got {self.sigma}")
        if self.Sigma is None:
            if self.dim < 1:
                raise ValueError(f"dim must be >= 1, got {self.dim}")
            self.Sigma = CovarianceMatrix.identity(self.dim)
        self.dim = self.Sigma.dim

    @cached_property
    def target(self) -> GaussianSpec:
        return GaussianSpec(np.zeros(self.dim), self.Sigma)

    @cached_property
    def proposal(self) -> RandomWalkProposal:
        return RandomWalkProposal(self.ell, self.Sigma, self.dim)


def limiting_step(
    state: ChainState,
    spec: LimitingKernelSpec,
    rng: RngStream,
) -> Tuple[ChainState, bool]:
    """One transition of the limiting kernel (step-wise reference path)"""
    theta_prop = spec.proposal.propose(state.theta, rng)
    z_prop = spec.sigma * float(rng.standard_normal()) - 0.5 * spec.sigma ** 2
    log_target_prop = mvn_logpdf(theta_prop, spec.target)
    log_alpha = log_accept(
        log_target_prop - (state.log_post_hat - state.z), 0.0, z_prop, state.z
    )
    if rng.log_uniform() < log_alpha:
        return ChainState(theta_prop, z_prop, log_target_prop + z_prop), True
    return state, False


def stationary_init(spec: LimitingKernelSpec, rng: RngStream) -> ChainState:
    """Draw theta ~ N(0, Sigma) and z ~ N(+sigma^2/2, sigma^2)"""
    theta = mvn_sample(spec.target, rng)
    z = spec.sigma * float(rng.standard_normal()) + 0.5 * spec.sigma ** 2
    return ChainState(theta, z, mvn_logpdf(theta, spec.target) + z)


def first_coordinate(theta: np.ndarray, z: float) -> float:
    return float(theta[0])


@dataclass(frozen=True)
class Trace:
    """
    Recorded test-function values and acceptance flags of a chain run

    f_values is (M,) for a scalar test function or (M, k) when several
    coordinates are recorded. z_values is kept only when requested.
    """
    f_values: np.ndarray
    accept_flags: np.ndarray
    z_values: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.f_values) != len(self.accept_flags):
            raise ValueError(
                f"trace lengths differ: {len(self.f_values)} values, "
                f"{len(self.accept_flags)} flags"
            )

    def __len__(self) -> int:
        return len(self.accept_flags)

    @property
    def acceptance_rate(self) -> float:
        if len(self) == 0:
            return float("nan")
        return float(np.mean(self.accept_flags))

    @property
    def n_coordinates(self) -> int:
        return 1 if self.f_values.ndim == 1 else self.f_values.shape[1]

    def coordinate(self, i: int) -> np.ndarray:
        if self.f_values.ndim == 1:
            if i != 0:
                raise IndexError(f"scalar trace has no coordinate {i}")
            return self.f_values
        return self.f_values[:, i]


Stepper = Callable[[ChainState], Tuple[ChainState, bool]]
TestFunction = Callable[[np.ndarray, float], float]


def run_chain(
    init: ChainState,
    stepper: Stepper,
    M: int,
    f: Optional[TestFunction] = None,
    burn_in: Optional[int] = None,
) -> Trace:
    """
    Apply a transition M + burn_in times and record the last M steps

    Args:
        init: Starting state
        stepper: state -> (state, accepted)
        M: Number of recorded iterations (>= 0)
        f: Test function f(theta, z); defaults to the first coordinate
        burn_in: Discarded iterations; defaults to M // 10

    Returns:
        Trace of length M
    """
    if M < 0:
        raise ValueError(f"M must be >= 0, got {M}")
    f = f or first_coordinate
    burn_in = M // 10 if burn_in is None else burn_in
    if burn_in < 0:
        raise ValueError(f"burn_in must be >= 0, got {burn_in}")

    state = init
    for _ in range(burn_in):
        state, _ = stepper(state)

    values = []
    flags = np.zeros(M, dtype=bool)
    for i in range(M):
        state, flags[i] = stepper(state)
        values.append(f(state.theta, state.z))

    return Trace(np.asarray(values, dtype=float), flags)


def initialize_chain(
    model: PseudoMarginalModel,
    theta0,
    rng: RngStream,
    max_attempts: int = MAX_INIT_ATTEMPTS,
) -> ChainState:
    """
    Starting state for a real model: draw estimates at theta0 until finite

    Raises:
        InitializationFailure: prior is zero at theta0 or no finite estimate
            within max_attempts draws
        EstimatorFailure: the estimator returned NaN
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    log_prior = model.log_prior(theta0)
    if not math.isfinite(log_prior):
        raise InitializationFailure(f"prior density is zero at theta0={theta0}")

    for attempt in range(max_attempts):
        loglik = model.loglik_hat(theta0, rng)
        if math.isnan(loglik):
            raise EstimatorFailure(f"estimator returned NaN at theta0={theta0}")
        if math.isfinite(loglik):
            if attempt > 0:
                logger.info(f"Initial estimate finite after {attempt + 1} draws")
            z = loglik - model.reference_loglik(theta0)
            return ChainState(theta0, z, log_prior + loglik)
        logger.debug(f"Zero likelihood estimate at theta0, attempt {attempt + 1}")

    raise InitializationFailure(
        f"no finite likelihood estimate at theta0 after {max_attempts} attempts"
    )


def simulate_limiting_chain(
    spec: LimitingKernelSpec,
    M: int,
    rng: RngStream,
    burn_in: Optional[int] = None,
    all_coordinates: bool = False,
    record_z: bool = False,
) -> Trace:
    """
    Run the limiting kernel from its exact stationary start

    Works in whitened coordinates eta = L^{-1} theta, where the target is
    N(0, I) and the proposal step is N(0, ell^2 I / d); randomness is drawn in
    blocks. Statistically identical to run_chain over limiting_step.

    Args:
        spec: Limiting kernel
        M: Recorded iterations
        rng: Random stream (consumed)
        burn_in: Discarded iterations; defaults to M // 10
        all_coordinates: Record every theta coordinate instead of theta_1
        record_z: Keep the noise trajectory

    Returns:
        Trace of length M
    """
    if M < 0:
        raise ValueError(f"M must be >= 0, got {M}")
    burn_in = M // 10 if burn_in is None else burn_in
    d = spec.dim
    L = spec.Sigma.chol
    step = spec.ell / math.sqrt(d)
    sigma = spec.sigma
    half_var = 0.5 * sigma ** 2
    total = burn_in + M

    eta = rng.standard_normal(d)
    z = sigma * float(rng.standard_normal()) + half_var

    flags = np.zeros(M, dtype=bool)
    etas = np.empty((M, d)) if all_coordinates else None
    first = np.empty(M)
    zs_out = np.empty(M) if record_z else None

    if d == 1:
        eta_s = float(eta[0])
        for start in range(0, total, CHUNK_SIZE):
            n = min(CHUNK_SIZE, total - start)
            xi = (step * rng.standard_normal(n)).tolist()
            z_props = (sigma * rng.standard_normal(n) - half_var).tolist()
            log_u = rng.log_uniform(n).tolist()
            for k in range(n):
                prop = eta_s + xi[k]
                log_alpha = log_accept(
                    -0.5 * (prop * prop - eta_s * eta_s), 0.0, z_props[k], z
                )
                accepted = log_u[k] < log_alpha
                if accepted:
                    eta_s = prop
                    z = z_props[k]
                i = start + k - burn_in
                if i >= 0:
                    flags[i] = accepted
                    first[i] = eta_s
                    if record_z:
                        zs_out[i] = z
        eta_values = first[:, None] if all_coordinates else first
    else:
        sq = float(eta @ eta)
        for start in range(0, total, CHUNK_SIZE):
            n = min(CHUNK_SIZE, total - start)
            xi = step * rng.standard_normal((n, d))
            z_props = (sigma * rng.standard_normal(n) - half_var).tolist()
            log_u = rng.log_uniform(n).tolist()
            for k in range(n):
                prop = eta + xi[k]
                sq_prop = float(prop @ prop)
                log_alpha = log_accept(-0.5 * (sq_prop - sq), 0.0, z_props[k], z)
                accepted = log_u[k] < log_alpha
                if accepted:
                    eta, sq, z = prop, sq_prop, z_props[k]
                i = start + k - burn_in
                if i >= 0:
                    flags[i] = accepted
                    if all_coordinates:
                        etas[i] = eta
                    else:
                        first[i] = eta[0]
                    if record_z:
                        zs_out[i] = z
        eta_values = etas if all_coordinates else first

    # theta = L eta; theta_1 = L[0, 0] * eta_1 since L is lower triangular
    if all_coordinates:
        f_values = eta_values @ L.T
    else:
        f_values = L[0, 0] * eta_values
    return Trace(f_values, flags, zs_out)
