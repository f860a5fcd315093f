"""
Importance Sampling Estimators
Unbiased likelihood estimation with N samples per observation, noise
sampling, mode-centred proposals and weight-moment checks
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import gammaln, log_ndtr

from .core import LOG_2PI, RngStream, logsumexp
from .kernel import PseudoMarginalModel
from .utils import ConditionViolated, EstimatorFailure, NonConvergence

logger = logging.getLogger(__name__)

MODE_TOL = 1e-10
MODE_MAX_ITER = 100


class ProposalKind(str, Enum):
    """Importance proposals centred at the cluster mode"""
    GAUSSIAN = "gaussian_at_mode"
    T = "t_at_mode"


@dataclass(frozen=True)
class IsProposal:
    """
    Mode-centred importance proposal for a scalar random effect

    tau_q fixes the proposal scale for every cluster. When it is None the
    scale is derived per cluster: the random-effect sd tau for the Gaussian
    kind, and the curvature scale (1/tau^2 + A''(0))^{-1/2} for the t kind.
    """
    kind: ProposalKind = ProposalKind.GAUSSIAN
    tau_q: Optional[float] = None
    nu: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ProposalKind(self.kind))
        if self.tau_q is not None and not self.tau_q > 0:
            raise ValueError(f"tau_q must be positive, got {self.tau_q}")
        if self.kind == ProposalKind.T and not (self.nu is not None and self.nu > 0):
            raise ValueError(f"t proposal needs nu > 0, got {self.nu}")

    @classmethod
    def gaussian(cls, tau_q: Optional[float] = None) -> "IsProposal":
        return cls(ProposalKind.GAUSSIAN, tau_q)

    @classmethod
    def student_t(cls, nu: float, tau_q: Optional[float] = None) -> "IsProposal":
        return cls(ProposalKind.T, tau_q, nu)

    def scales(self, tau: float, offsets: np.ndarray, expfam: Any) -> np.ndarray:
        """Proposal scale per cluster; offsets has shape (T, J)"""
        n_clusters = offsets.shape[0]
        if self.tau_q is not None:
            return np.full(n_clusters, float(self.tau_q))
        if self.kind == ProposalKind.GAUSSIAN:
            return np.full(n_clusters, float(tau))
        curvature = np.sum(expfam.A2(offsets), axis=1)
        return (1.0 / tau ** 2 + curvature) ** -0.5

    def sample(self, center, scale, rng: RngStream, size) -> np.ndarray:
        if self.kind == ProposalKind.GAUSSIAN:
            return center + scale * rng.standard_normal(size)
        return center + scale * rng.standard_t(self.nu, size)

    def log_q_tilde(self, x, center, scale):
        """Log-density relative to its value at the centre"""
        r2 = ((x - center) / scale) ** 2
        if self.kind == ProposalKind.GAUSSIAN:
            return -0.5 * r2
        return -0.5 * (self.nu + 1.0) * np.log1p(r2 / self.nu)

    def log_density_at_center(self, scale):
        if self.kind == ProposalKind.GAUSSIAN:
            return -0.5 * LOG_2PI - np.log(scale)
        nu = self.nu
        return (
            gammaln(0.5 * (nu + 1.0)) - gammaln(0.5 * nu)
            - 0.5 * math.log(nu * math.pi) - np.log(scale)
        )

    def logpdf(self, x, center, scale):
        return self.log_density_at_center(scale) + self.log_q_tilde(x, center, scale)


@dataclass(frozen=True)
class NoiseSample:
    """One draw of the log-likelihood estimation error"""
    z: float
    theta: np.ndarray
    T: int
    N: int

    @property
    def is_zero_estimate(self) -> bool:
        return self.z == -math.inf


def is_loglik(
    model: Any,
    theta,
    data,
    N: int,
    rng: RngStream,
    proposal: Optional[IsProposal] = None,
) -> float:
    """
    Log of the product over observations of N-sample importance estimates

    The model supplies log_weights(theta, data, N, rng, proposal) returning a
    (T, N) array of per-sample log-weights.

    Returns:
        sum_t [logsumexp_i log w_ti - log N]; -inf if every weight of some
        observation is zero

    Raises:
        EstimatorFailure: on NaN log-weights
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    log_w = np.asarray(model.log_weights(theta, data, N, rng, proposal), dtype=float)
    if log_w.shape[0] == 0:
        return 0.0
    if np.isnan(log_w).any():
        raise EstimatorFailure(f"NaN importance weight at theta={theta}")

    per_observation = logsumexp(log_w, axis=1) - math.log(N)
    if np.isneginf(per_observation).any():
        logger.debug(f"All weights zero for some observation at theta={theta}")
        return -math.inf
    return float(np.sum(per_observation))


def sample_noise(
    model: Any,
    theta,
    data,
    N: int,
    rng: RngStream,
    proposal: Optional[IsProposal] = None,
) -> NoiseSample:
    """Draw z = log p_hat - log p at theta (model must expose exact_loglik)"""
    estimate = is_loglik(model, theta, data, N, rng, proposal)
    exact = model.exact_loglik(theta, data)
    return NoiseSample(
        z=estimate - exact,
        theta=np.atleast_1d(np.asarray(theta, dtype=float)),
        T=len(data),
        N=N,
    )


def estimate_sigma(
    model: Any,
    theta_hat,
    data,
    N: int,
    reps: int,
    rng: RngStream,
    proposal: Optional[IsProposal] = None,
) -> float:
    """
    Sample standard deviation of reps independent log-likelihood estimates

    Returns inf (with a warning) when some estimate is zero.
    """
    if reps < 2:
        raise ValueError(f"reps must be >= 2, got {reps}")
    estimates = np.array(
        [is_loglik(model, theta_hat, data, N, rng, proposal) for _ in range(reps)]
    )
    if not np.all(np.isfinite(estimates)):
        logger.warning(f"Zero likelihood estimates among {reps} replicates at N={N}")
        return math.inf
    return float(np.std(estimates, ddof=1))


def find_modes(
    offsets: np.ndarray,
    S: np.ndarray,
    tau2: float,
    expfam: Any,
    tol: float = MODE_TOL,
    max_iter: int = MODE_MAX_ITER,
) -> np.ndarray:
    """
    Solve x = tau^2 (S - A~'(x)) for every cluster at once

    Safeguarded Newton on F(x) = S - A~'(x) - x / tau^2, which is strictly
    decreasing. The bracket is [0, tau^2 S] when F(0) > 0 and
    [tau^2 F(0), 0] otherwise; steps leaving it are replaced by bisection.
    Clusters still unresolved after max_iter fall back to Brent's method.

    Args:
        offsets: Linear predictors c_tj^T beta, shape (T, J)
        S: Sufficient statistics sum_j y_tj, shape (T,)
        tau2: Random-effect variance
        expfam: Family exposing A1 and A2

    Returns:
        Modes, shape (T,)

    Raises:
        NonConvergence: if the fallback also fails
    """
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    S = np.atleast_1d(np.asarray(S, dtype=float))

    def residual(x):
        return S - np.sum(expfam.A1(offsets + x[:, None]), axis=1) - x / tau2

    x = np.zeros(len(S))
    f0 = residual(x)
    lo = np.where(f0 > 0, 0.0, tau2 * f0)
    hi = np.where(f0 > 0, tau2 * S, 0.0)

    done = np.zeros(len(S), dtype=bool)
    for _ in range(max_iter):
        fx = residual(x)
        done = tau2 * np.abs(fx) <= tol * (1.0 + np.abs(x))
        if done.all():
            return x
        lo = np.where(fx > 0, x, lo)
        hi = np.where(fx < 0, x, hi)
        slope = -np.sum(expfam.A2(offsets + x[:, None]), axis=1) - 1.0 / tau2
        newton = x - fx / slope
        inside = (newton > lo) & (newton < hi)
        step = np.where(inside, newton, 0.5 * (lo + hi))
        x = np.where(done, x, step)

    for t in np.flatnonzero(~done):
        x[t] = _mode_by_brent(offsets[t], S[t], tau2, expfam, lo[t], hi[t], tol)
    return x


def _mode_by_brent(offsets, S, tau2, expfam, lo, hi, tol) -> float:
    def residual(x):
        return S - np.sum(expfam.A1(offsets + x)) - x / tau2

    try:
        x = brentq(residual, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    except ValueError as exc:
        raise NonConvergence(f"mode bracket [{lo}, {hi}] failed: {exc}") from exc
    if tau2 * abs(residual(x)) > tol * (1.0 + abs(x)):
        raise NonConvergence(f"mode residual above tolerance at x={x}")
    logger.debug(f"Mode found by Brent fallback: {x}")
    return float(x)


def _cluster_terms(cluster: Any, params: Any):
    offsets = np.atleast_2d(cluster.covariates @ np.asarray(params.beta, dtype=float))
    S = np.array([float(np.sum(cluster.y))])
    return offsets, S, float(params.tau) ** 2


def find_mode(cluster: Any, params: Any, expfam: Any) -> float:
    """Mode of log h(x) = x S - A~(x) - x^2 / (2 tau^2) for one cluster"""
    offsets, S, tau2 = _cluster_terms(cluster, params)
    return float(find_modes(offsets, S, tau2, expfam)[0])


def curvature_scale(cluster: Any, params: Any, expfam: Any) -> float:
    """t-proposal scale from tau_q^{-2} = tau^{-2} + A~''(0)"""
    offsets, _, tau2 = _cluster_terms(cluster, params)
    return float((1.0 / tau2 + np.sum(expfam.A2(offsets))) ** -0.5)


def _log_h(x, offsets_row, S, tau2, expfam):
    x = np.asarray(x, dtype=float)
    a_tilde = np.sum(expfam.A(offsets_row[:, None] + np.atleast_1d(x)[None, :]), axis=0)
    return np.atleast_1d(x) * S - a_tilde - np.atleast_1d(x) ** 2 / (2.0 * tau2)


@dataclass(frozen=True)
class WeightMomentReport:
    """Monte Carlo moments of the modified weight and their closed-form bounds"""
    a: float
    estimate: float
    se: float
    upper_bound: float
    mean_weight: float
    mean_weight_se: float
    lower_bound: float
    lower_bound_tight: float
    mode: float
    tau_q: float


def gaussian_moment_bound(a: float, tau: float, tau_q: float) -> float:
    """
    Upper bound on E[w~^a] for the mode-centred Gaussian proposal

    Raises:
        ConditionViolated: unless tau_q^2 > (a - 1) / a * tau^2
    """
    if not tau_q ** 2 > (a - 1.0) / a * tau ** 2:
        raise ConditionViolated(
            f"Gaussian proposal needs tau_q^2 > {(a - 1.0) / a:.4g} tau^2 for a={a}; "
            f"got tau_q^2 / tau^2 = {tau_q ** 2 / tau ** 2:.4g}"
        )
    return ((a * tau_q ** 2 - (a - 1.0) * tau ** 2) / tau ** 2) ** -0.5


def t_moment_bound(a: float, tau: float, tau_q: float, nu: float) -> float:
    """Upper bound K2^a on E[w~^a] for the mode-centred t proposal"""
    ratio = tau_q ** 2 / tau ** 2
    if ratio >= (nu + 1.0) / nu:
        return 1.0
    log_k2 = 0.5 * (nu + 1.0) * math.log((nu + 1.0) / (nu * ratio)) + 0.5 * nu * (
        ratio - 1.0 - 1.0 / nu
    )
    return math.exp(a * log_k2)


def weight_moment(
    cluster: Any,
    params: Any,
    expfam: Any,
    proposal: IsProposal,
    a: float,
    N_mc: int,
    rng: RngStream,
) -> WeightMomentReport:
    """
    Monte Carlo E[w~^a] for one cluster next to its closed-form bounds

    The modified weight is h(x) / h(x_hat) / q~(x), equal to 1 at the mode.
    Also reports E[w~] against the lower bounds C exp(b^2/2) Phi(-b) and
    C / (sqrt(2 pi) (b + 1)) with b = tau A~'(x_hat) and
    C = q(x_hat) sqrt(2 pi tau^2).

    Raises:
        ConditionViolated: Gaussian proposal with tau_q^2 <= (a-1)/a tau^2
    """
    if a <= 0:
        raise ValueError(f"moment order must be positive, got {a}")
    offsets, S, tau2 = _cluster_terms(cluster, params)
    tau = math.sqrt(tau2)
    tau_q = float(proposal.scales(tau, offsets, expfam)[0])

    if proposal.kind == ProposalKind.GAUSSIAN:
        upper = gaussian_moment_bound(a, tau, tau_q)
    else:
        upper = t_moment_bound(a, tau, tau_q, proposal.nu)

    x_hat = float(find_modes(offsets, S, tau2, expfam)[0])
    x = proposal.sample(x_hat, tau_q, rng, N_mc)
    row = offsets[0]
    log_w = (
        _log_h(x, row, S[0], tau2, expfam)
        - _log_h(x_hat, row, S[0], tau2, expfam)[0]
        - proposal.log_q_tilde(x, x_hat, tau_q)
    )
    w_a = np.exp(a * log_w)
    w = np.exp(log_w)

    b = tau * float(np.sum(expfam.A1(row + x_hat)))
    log_c = float(proposal.log_density_at_center(tau_q)) + 0.5 * LOG_2PI + math.log(tau)
    tight = math.exp(log_c + 0.5 * b ** 2 + float(log_ndtr(-b)))
    loose = math.exp(log_c) / (math.sqrt(2.0 * math.pi) * (b + 1.0))

    return WeightMomentReport(
        a=a,
        estimate=float(np.mean(w_a)),
        se=float(np.std(w_a, ddof=1) / math.sqrt(N_mc)),
        upper_bound=upper,
        mean_weight=float(np.mean(w)),
        mean_weight_se=float(np.std(w, ddof=1) / math.sqrt(N_mc)),
        lower_bound=loose,
        lower_bound_tight=tight,
        mode=x_hat,
        tau_q=tau_q,
    )


def toy_weight_moment(theta: float, y: float, a: float) -> float:
    """
    Closed-form a-th moment of the normalised toy weight

    (2^a / (a + 1))^{1/2} exp{a (a - 1) (y - theta)^2 / (4 (a + 1))}
    """
    return math.sqrt(2.0 ** a / (a + 1.0)) * math.exp(
        a * (a - 1.0) * (y - theta) ** 2 / (4.0 * (a + 1.0))
    )


class ImportanceSamplingTarget(PseudoMarginalModel):
    """
    Pseudo-marginal target built from a latent-variable model and a dataset

    The model provides log_prior(theta), log_weights(...) and, for noise
    tracking, exact_loglik(theta, data).
    """

    def __init__(
        self,
        model: Any,
        data,
        N: int,
        proposal: Optional[IsProposal] = None,
        track_noise: bool = False,
    ):
        if N < 1:
            raise ValueError(f"N must be >= 1, got {N}")
        self.model = model
        self.data = data
        self.N = N
        self.proposal = proposal
        self.track_noise = track_noise

    def log_prior(self, theta: np.ndarray) -> float:
        return self.model.log_prior(theta)

    def loglik_hat(self, theta: np.ndarray, rng: RngStream) -> float:
        return is_loglik(self.model, theta, self.data, self.N, rng, self.proposal)

    def exact_loglik(self, theta: np.ndarray) -> Optional[float]:
        return self.model.exact_loglik(theta, self.data)

    def log_posterior(self, theta: np.ndarray) -> float:
        """Exact unnormalised log posterior (needs exact_loglik)"""
        log_prior = self.log_prior(theta)
        if not math.isfinite(log_prior):
            return log_prior
        return log_prior + self.exact_loglik(theta)
