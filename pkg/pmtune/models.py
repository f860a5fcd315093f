"""
Latent Variable Models
Gaussian toy model with analytic posterior and exponential-family
random-intercept GLMMs (logistic, Poisson) with simulators
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.hermite import hermgauss
from scipy import stats
from scipy.special import expit, gammaln

from .core import LOG_2PI, RngStream, logsumexp
from .estimators import IsProposal, find_modes
from .utils import write_csv

logger = logging.getLogger(__name__)

QUADRATURE_NODES = 64
_GH_NODES, _GH_WEIGHTS = hermgauss(QUADRATURE_NODES)
_GH_LOG_WEIGHTS = np.log(_GH_WEIGHTS) + _GH_NODES ** 2


# ---------------------------------------------------------------------------
# Toy model: X_t ~ N(theta, 1), Y_t | X_t ~ N(X_t, 1)
# ---------------------------------------------------------------------------

def toy_exact_loglik(theta: float, y) -> float:
    """Sum of log N(y_t; theta, 2)"""
    y = np.asarray(y, dtype=float)
    return float(np.sum(-0.5 * (LOG_2PI + math.log(2.0)) - 0.25 * (y - theta) ** 2))


def toy_posterior(y, sigma0_sq: float) -> Tuple[float, float]:
    """
    Posterior of theta under the N(0, sigma0^2) prior

    Returns:
        (mean, variance) with variance (1/sigma0^2 + T/2)^{-1}
    """
    if not sigma0_sq > 0:
        raise ValueError(f"prior variance must be positive, got {sigma0_sq}")
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return 0.0, float(sigma0_sq)
    if math.isinf(sigma0_sq):
        return float(np.sum(y)) / y.size, 2.0 / y.size
    var = 1.0 / (1.0 / sigma0_sq + 0.5 * y.size)
    return float(var * np.sum(y) / 2.0), float(var)


def toy_is_logweight(theta: float, y_t, u):
    """log N(y_t - u; theta, 1) for a standard-normal draw u"""
    r = np.asarray(y_t, dtype=float) - u - theta
    return -0.5 * LOG_2PI - 0.5 * r ** 2


def toy_simulate(theta_bar: float, T: int, rng: RngStream) -> np.ndarray:
    """y_t = theta_bar + xi_1 + xi_2 with xi_i standard normal"""
    if T < 0:
        raise ValueError(f"T must be >= 0, got {T}")
    xi = rng.standard_normal((2, T))
    return theta_bar + xi[0] + xi[1]


class ToyModel:
    """Gaussian latent-variable model with a N(0, sigma0_sq) prior on theta"""

    def __init__(self, sigma0_sq: float = 1e10):
        if not sigma0_sq > 0:
            raise ValueError(f"prior variance must be positive, got {sigma0_sq}")
        self.sigma0_sq = sigma0_sq

    def __repr__(self) -> str:
        return f"ToyModel(sigma0_sq={self.sigma0_sq:g})"

    @staticmethod
    def _scalar(theta) -> float:
        return float(np.ravel(theta)[0])

    def log_prior(self, theta) -> float:
        t = self._scalar(theta)
        if math.isinf(self.sigma0_sq):
            return 0.0
        return -0.5 * (LOG_2PI + math.log(self.sigma0_sq)) - 0.5 * t * t / self.sigma0_sq

    def log_weights(
        self,
        theta,
        y,
        N: int,
        rng: RngStream,
        proposal: Optional[IsProposal] = None,
    ) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        u = rng.standard_normal((y.size, N))
        return toy_is_logweight(self._scalar(theta), y[:, None], u)

    def exact_loglik(self, theta, y) -> float:
        return toy_exact_loglik(self._scalar(theta), y)

    def posterior(self, y) -> Tuple[float, float]:
        return toy_posterior(y, self.sigma0_sq)

    def simulate(self, theta_bar: float, T: int, rng: RngStream) -> np.ndarray:
        return toy_simulate(theta_bar, T, rng)


# ---------------------------------------------------------------------------
# Exponential families
# ---------------------------------------------------------------------------

class Family(str, Enum):
    BINOMIAL = "binomial"
    POISSON = "poisson"


@dataclass(frozen=True)
class ExpFamilySpec:
    """
    Natural exponential family with canonical link

    A is the log-partition function, A1 and A2 its first two derivatives
    and log_base_measure the log m(y) term of the density.
    """
    family: Family
    n_trials: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if self.family == Family.BINOMIAL and self.n_trials < 1:
            raise ValueError(f"binomial needs n_trials >= 1, got {self.n_trials}")

    @classmethod
    def binomial(cls, n: int = 1) -> "ExpFamilySpec":
        return cls(Family.BINOMIAL, n)

    @classmethod
    def poisson(cls) -> "ExpFamilySpec":
        return cls(Family.POISSON)

    @classmethod
    def from_name(cls, name: str, n_trials: int = 1) -> "ExpFamilySpec":
        if name in ("logistic", "binomial"):
            return cls.binomial(n_trials)
        if name == "poisson":
            return cls.poisson()
        raise ValueError(f"unknown family: {name}")

    def A(self, eta):
        if self.family == Family.BINOMIAL:
            return self.n_trials * np.logaddexp(0.0, eta)
        return np.exp(eta)

    def A1(self, eta):
        if self.family == Family.BINOMIAL:
            return self.n_trials * expit(eta)
        return np.exp(eta)

    def A2(self, eta):
        if self.family == Family.BINOMIAL:
            p = expit(eta)
            return self.n_trials * p * (1.0 - p)
        return np.exp(eta)

    @property
    def sup_mean(self) -> float:
        """sup_eta A'(eta): n for the binomial, unbounded for Poisson"""
        return float(self.n_trials) if self.family == Family.BINOMIAL else math.inf

    def log_base_measure(self, y):
        y = np.asarray(y, dtype=float)
        if self.family == Family.BINOMIAL:
            n = self.n_trials
            return gammaln(n + 1.0) - gammaln(y + 1.0) - gammaln(n - y + 1.0)
        return -gammaln(y + 1.0)

    def loglik(self, y, eta):
        """log m(y) + y eta - A(eta), elementwise"""
        return self.log_base_measure(y) + np.asarray(y, dtype=float) * eta - self.A(eta)

    def sample(self, eta, rng: RngStream):
        if self.family == Family.BINOMIAL:
            return rng.binomial(self.n_trials, expit(eta))
        return rng.poisson(np.exp(eta))


# ---------------------------------------------------------------------------
# Random-intercept GLMM: eta_tj = c_tj^T beta + X_t, X_t ~ N(0, tau^2)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlmmParams:
    """theta = (beta, tau) with tau the random-intercept sd"""
    beta: np.ndarray
    tau: float

    def __post_init__(self):
        object.__setattr__(self, "beta", np.atleast_1d(np.asarray(self.beta, dtype=float)))
        object.__setattr__(self, "tau", float(self.tau))

    @classmethod
    def from_vector(cls, theta) -> "GlmmParams":
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        return cls(theta[:-1], theta[-1])

    def to_vector(self) -> np.ndarray:
        return np.append(self.beta, self.tau)

    @property
    def dim(self) -> int:
        return self.beta.size + 1


@dataclass(frozen=True)
class ClusterObs:
    """Responses y_j and covariate rows c_j of one cluster"""
    y: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.atleast_1d(np.asarray(self.y, dtype=float))
        c = np.atleast_2d(np.asarray(self.covariates, dtype=float))
        if c.shape[0] != y.size:
            raise ValueError(f"{y.size} responses but {c.shape[0]} covariate rows")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", c)

    @property
    def S(self) -> float:
        return float(np.sum(self.y))

    @property
    def J(self) -> int:
        return self.y.size


@dataclass(frozen=True)
class GlmmData:
    """
    Clustered responses y (T, J) with covariates (T, J, p)

    Serialised as a long table with columns cluster_id, obs_index, y, x0..x{p-1}.
    """
    y: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        c = np.asarray(self.covariates, dtype=float)
        if c.ndim != 3 or c.shape[:2] != y.shape:
            raise ValueError(f"covariates shape {c.shape} does not match y {y.shape}")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "covariates", c)

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def T(self) -> int:
        return self.y.shape[0]

    @property
    def J(self) -> int:
        return self.y.shape[1]

    @property
    def p(self) -> int:
        return self.covariates.shape[2]

    def cluster(self, t: int) -> ClusterObs:
        return ClusterObs(self.y[t], self.covariates[t])

    def clusters(self) -> Iterator[ClusterObs]:
        for t in range(self.T):
            yield self.cluster(t)

    def subset(self, T: int) -> "GlmmData":
        return GlmmData(self.y[:T], self.covariates[:T])

    def to_frame(self) -> pd.DataFrame:
        T, J = self.y.shape
        frame = pd.DataFrame({
            "cluster_id": np.repeat(np.arange(T), J),
            "obs_index": np.tile(np.arange(J), T),
            "y": self.y.ravel(),
        })
        flat = self.covariates.reshape(T * J, self.p)
        for k in range(self.p):
            frame[f"x{k}"] = flat[:, k]
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "GlmmData":
        frame = frame.sort_values(["cluster_id", "obs_index"])
        T = frame["cluster_id"].nunique()
        J = frame["obs_index"].nunique()
        if len(frame) != T * J:
            raise ValueError("dataset is not a complete cluster x observation grid")
        x_cols = sorted(
            (c for c in frame.columns if c.startswith("x")), key=lambda c: int(c[1:])
        )
        y = frame["y"].to_numpy(dtype=float).reshape(T, J)
        covariates = frame[x_cols].to_numpy(dtype=float).reshape(T, J, len(x_cols))
        return cls(y, covariates)

    def to_csv(self, path: Path) -> Path:
        return write_csv(self.to_frame(), path)

    @classmethod
    def from_csv(cls, path: Path) -> "GlmmData":
        return cls.from_frame(pd.read_csv(path))


def make_design(T: int, J: int, p: int, rng: RngStream) -> np.ndarray:
    """
    Covariates (T, J, p): an intercept column and p - 1 standardised
    Gaussian covariates
    """
    if p < 1 or J < 1 or T < 0:
        raise ValueError(f"invalid design size T={T}, J={J}, p={p}")
    design = np.ones((T, J, p))
    if p > 1 and T > 0:
        raw = rng.standard_normal((T * J, p - 1))
        raw = (raw - raw.mean(axis=0)) / raw.std(axis=0)
        design[:, :, 1:] = raw.reshape(T, J, p - 1)
    return design


class GlmmModel:
    """
    Random-intercept GLMM with importance-sampled marginal likelihood

    Priors: beta_k ~ N(0, beta_prior_sd^2) and tau^2 ~ InvGamma(shape, scale),
    expressed on tau with the Jacobian 2 tau. covariates is either one shared
    (J, p) design or a per-cluster (T, J, p) array and is used by the
    simulator only; likelihood evaluations take the design from the data.
    """

    def __init__(
        self,
        expfam: ExpFamilySpec,
        covariates: Optional[np.ndarray] = None,
        beta=None,
        tau: Optional[float] = None,
        proposal: Optional[IsProposal] = None,
        beta_prior_sd: float = 10.0,
        tau2_prior_shape: float = 2.0,
        tau2_prior_scale: float = 1.0,
    ):
        if tau is not None and not tau > 0:
            raise ValueError(f"tau must be positive, got {tau}")
        self.expfam = expfam
        self.covariates = None if covariates is None else np.asarray(covariates, dtype=float)
        self.beta = None if beta is None else np.atleast_1d(np.asarray(beta, dtype=float))
        self.tau = tau
        self.proposal = proposal or IsProposal.gaussian()
        self.beta_prior_sd = beta_prior_sd
        self.tau2_prior = stats.invgamma(tau2_prior_shape, scale=tau2_prior_scale)

    def __repr__(self) -> str:
        return f"GlmmModel(family={self.expfam.family.value}, proposal={self.proposal.kind.value})"

    @property
    def params(self) -> GlmmParams:
        if self.beta is None or self.tau is None:
            raise ValueError("model has no generating parameters")
        return GlmmParams(self.beta, self.tau)

    def log_prior(self, theta) -> float:
        params = GlmmParams.from_vector(theta)
        if not params.tau > 0:
            return -math.inf
        log_beta = float(np.sum(stats.norm.logpdf(params.beta, 0.0, self.beta_prior_sd)))
        tau2 = params.tau ** 2
        return log_beta + float(self.tau2_prior.logpdf(tau2)) + math.log(2.0 * params.tau)

    def _terms(self, params: GlmmParams, data: GlmmData):
        offsets = data.covariates @ params.beta
        S = data.y.sum(axis=1)
        tau2 = params.tau ** 2
        return offsets, S, tau2

    def _log_joint(self, x, offsets, y, tau2):
        """log g(y | x) + log N(x; 0, tau^2) for x of shape (T, K)"""
        eta = offsets[:, :, None] + x[:, None, :]
        log_g = np.sum(self.expfam.loglik(y[:, :, None], eta), axis=1)
        return log_g - 0.5 * (LOG_2PI + math.log(tau2)) - x ** 2 / (2.0 * tau2)

    def log_weights(
        self,
        theta,
        data: GlmmData,
        N: int,
        rng: RngStream,
        proposal: Optional[IsProposal] = None,
    ) -> np.ndarray:
        """Per-sample log importance weights, shape (T, N)"""
        proposal = proposal or self.proposal
        params = GlmmParams.from_vector(theta)
        offsets, S, tau2 = self._terms(params, data)
        modes = find_modes(offsets, S, tau2, self.expfam)
        scales = proposal.scales(params.tau, offsets, self.expfam)
        x = proposal.sample(modes[:, None], scales[:, None], rng, (data.T, N))
        log_q = proposal.logpdf(x, modes[:, None], scales[:, None])
        return self._log_joint(x, offsets, data.y, tau2) - log_q

    def cluster_logweight(
        self,
        cluster: ClusterObs,
        params: GlmmParams,
        x,
        proposal: Optional[IsProposal] = None,
    ):
        return glmm_cluster_logweight(cluster, params, x, proposal or self.proposal, self.expfam)

    def cluster_logliks(self, theta, data: GlmmData) -> np.ndarray:
        """
        log p(y_t | theta) per cluster by Gauss-Hermite quadrature

        Nodes are centred at the mode and scaled by the curvature there.
        """
        params = GlmmParams.from_vector(theta)
        offsets, S, tau2 = self._terms(params, data)
        modes = find_modes(offsets, S, tau2, self.expfam)
        curvature = np.sum(self.expfam.A2(offsets + modes[:, None]), axis=1)
        scale = (1.0 / tau2 + curvature) ** -0.5
        x = modes[:, None] + math.sqrt(2.0) * scale[:, None] * _GH_NODES[None, :]
        log_terms = _GH_LOG_WEIGHTS[None, :] + self._log_joint(x, offsets, data.y, tau2)
        return np.log(math.sqrt(2.0) * scale) + logsumexp(log_terms, axis=1)

    def exact_loglik(self, theta, data: GlmmData) -> float:
        if len(data) == 0:
            return 0.0
        return float(np.sum(self.cluster_logliks(theta, data)))

    def simulate(self, T: int, rng: RngStream, params: Optional[GlmmParams] = None) -> GlmmData:
        return glmm_simulate(self, T, rng, params)


def glmm_cluster_logweight(
    cluster: ClusterObs,
    params: GlmmParams,
    x,
    proposal: IsProposal,
    expfam: ExpFamilySpec,
):
    """
    log g(y | x) + log N(x; 0, tau^2) - log q(x | y) for one cluster

    The proposal is centred at the cluster mode.
    """
    offsets = np.atleast_2d(cluster.covariates @ params.beta)
    tau2 = params.tau ** 2
    mode = find_modes(offsets, np.array([cluster.S]), tau2, expfam)[0]
    scale = proposal.scales(params.tau, offsets, expfam)[0]
    x = np.asarray(x, dtype=float)
    eta = offsets[0][:, None] + np.atleast_1d(x)[None, :]
    log_g = np.sum(expfam.loglik(cluster.y[:, None], eta), axis=0)
    log_f = -0.5 * (LOG_2PI + math.log(tau2)) - np.atleast_1d(x) ** 2 / (2.0 * tau2)
    result = log_g + log_f - proposal.logpdf(np.atleast_1d(x), mode, scale)
    return float(result[0]) if np.ndim(x) == 0 else result


def glmm_simulate(
    model: GlmmModel,
    T: int,
    rng: RngStream,
    params: Optional[GlmmParams] = None,
) -> GlmmData:
    """
    Draw X_t ~ N(0, tau^2), then Y_tj from the family at c_tj^T beta + X_t

    A shared (J, p) design is repeated for every cluster; a (T, J, p) design
    must have exactly T clusters.
    """
    params = params or model.params
    if model.covariates is None:
        raise ValueError("model has no covariate design to simulate from")
    design = model.covariates
    if design.ndim == 2:
        design = np.broadcast_to(design, (T,) + design.shape).copy()
    elif design.shape[0] != T:
        raise ValueError(f"design has {design.shape[0]} clusters, asked for {T}")

    x = params.tau * rng.standard_normal(T)
    eta = design @ params.beta + x[:, None]
    y = model.expfam.sample(eta, rng)
    logger.debug(f"Simulated {T} clusters, mean response {float(np.mean(y)):.4f}")
    return GlmmData(np.asarray(y, dtype=float), design)
