"""
Asymptotic Checks
Moment and distributional proxies for the Gaussian limit of the
log-likelihood noise, and Bernstein-von Mises distances for the toy model
"""

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import integrate, stats

from .core import RngStream
from .estimators import IsProposal, is_loglik
from .models import toy_posterior, toy_simulate

logger = logging.getLogger(__name__)

DataFactory = Callable[[int, RngStream], Any]


@dataclass(frozen=True)
class CltRow:
    """Noise statistics for one data size T"""
    T: int
    N: int
    reps: int
    mean_z: float
    var_z: float
    mean_plus_half_var: float
    ks_to_gaussian: float
    stationary_mean_z: float
    stationary_dev: float
    unbiasedness_dev: float
    unbiasedness_se: float
    ess: float
    ess_floor: float
    n_zero: int


@dataclass
class CltReport:
    """Rows of noise statistics for a sequence of data sizes"""
    theta: List[float]
    gamma: float
    seed: int
    rows: List[CltRow] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([asdict(r) for r in self.rows])
        if len(self.theta) == 1:
            frame.insert(0, "theta", self.theta[0])
        return frame

    def as_dict(self) -> dict:
        return {
            "theta": self.theta,
            "gamma": self.gamma,
            "seed": self.seed,
            "rows": [asdict(r) for r in self.rows],
        }


def noise_statistics(z: np.ndarray, T: int, N: int) -> CltRow:
    """
    Summaries of reps noise draws z

    Compares z with N(-v/2, v), v the sample variance, and the
    exp(z)-reweighted mean with +v/2. A zero-variance sample (exact
    estimator) yields all-zero deviations.
    """
    z = np.asarray(z, dtype=float)
    reps = z.size
    finite = z[np.isfinite(z)]
    n_zero = int(reps - finite.size)
    if finite.size < 2:
        raise ValueError(f"need at least two finite noise draws, got {finite.size}")

    mean = float(np.mean(finite))
    var = float(np.var(finite, ddof=1))
    weights_natural = np.exp(z)

    if var == 0.0:
        ks, stationary_mean, ess = 0.0, mean, float(reps)
    else:
        ks = float(stats.kstest(finite, "norm", args=(-0.5 * var, math.sqrt(var))).statistic)
        w = np.exp(finite - finite.max())
        stationary_mean = float(np.sum(finite * w) / np.sum(w))
        ess = float(np.sum(w) ** 2 / np.sum(w ** 2))

    var_natural = float(np.var(weights_natural, ddof=1))
    return CltRow(
        T=T,
        N=N,
        reps=reps,
        mean_z=mean,
        var_z=var,
        mean_plus_half_var=abs(mean + 0.5 * var),
        ks_to_gaussian=ks,
        stationary_mean_z=stationary_mean,
        stationary_dev=abs(stationary_mean - 0.5 * var),
        unbiasedness_dev=abs(float(np.mean(weights_natural)) - 1.0),
        unbiasedness_se=math.sqrt(var_natural / reps),
        ess=ess,
        ess_floor=reps / (1.0 + var_natural),
        n_zero=n_zero,
    )


def _default_factory(model: Any, theta_bar: float) -> DataFactory:
    def simulate(T: int, rng: RngStream):
        return model.simulate(theta_bar, T, rng)
    return simulate


def noise_clt_report(
    model: Any,
    theta,
    T_list: Sequence[int],
    gamma: float = 1.0,
    reps: int = 2000,
    seed: int = 0,
    simulate: Optional[DataFactory] = None,
    theta_bar: Optional[float] = None,
    proposal: Optional[IsProposal] = None,
) -> CltReport:
    """
    Noise draws Z = log p_hat - log p at theta for growing data sizes

    N = ceil(gamma T) samples per observation. The dataset for size T comes
    from stream (seed, T, 0) and the noise draws from (seed, T, 1); simulate
    defaults to model.simulate(theta_bar, T, rng) as for the toy model.
    """
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if reps < 2:
        raise ValueError(f"reps must be >= 2, got {reps}")
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if simulate is None:
        simulate = _default_factory(model, float(theta[0] if theta_bar is None else theta_bar))

    report = CltReport(theta=theta.tolist(), gamma=gamma, seed=seed)
    for T in T_list:
        N = int(math.ceil(gamma * T))
        data = simulate(T, RngStream(seed, (T, 0)))
        rng = RngStream(seed, (T, 1))
        exact = model.exact_loglik(theta, data)
        z = np.array([
            is_loglik(model, theta, data, N, rng, proposal) - exact for _ in range(reps)
        ])
        row = noise_statistics(z, T, N)
        logger.info(
            f"T={T}, N={N}: mean_z={row.mean_z:.4f}, var_z={row.var_z:.4f}, "
            f"ks={row.ks_to_gaussian:.4f}"
        )
        report.rows.append(row)
    return report


def noise_clt_spot_check(
    model: Any,
    theta_bar: float,
    T: int,
    gamma: float = 1.0,
    reps: int = 2000,
    seed: int = 0,
    delta: float = 1.0,
    simulate: Optional[DataFactory] = None,
) -> pd.DataFrame:
    """
    Noise statistics at theta_bar + k delta / sqrt(T), k = -2..2

    All five points share the dataset simulated at theta_bar.
    """
    simulate = simulate or _default_factory(model, theta_bar)
    frames = []
    for k in range(-2, 3):
        theta = theta_bar + k * delta / math.sqrt(T)
        report = noise_clt_report(model, [theta], [T], gamma, reps, seed, simulate)
        frames.append(report.to_frame())
    return pd.concat(frames, ignore_index=True)


@dataclass(frozen=True)
class BvmRow:
    T: int
    theta_hat: float
    post_mean: float
    post_var: float
    l1: float
    tv: float


def _gaussian_l1(m1: float, v1: float, m2: float, v2: float) -> float:
    if m1 == m2 and v1 == v2:
        return 0.0
    s1, s2 = math.sqrt(v1), math.sqrt(v2)
    width = 12.0 * max(s1, s2)
    lo, hi = min(m1, m2) - width, max(m1, m2) + width

    def gap(x):
        return abs(stats.norm.pdf(x, m1, s1) - stats.norm.pdf(x, m2, s2))

    value, _ = integrate.quad(gap, lo, hi, points=sorted({m1, m2}), epsabs=1e-10, limit=500)
    return float(value)


def bvm_report(
    sigma0_sq: float,
    theta_bar: float,
    T_list: Sequence[int],
    seed: int = 0,
) -> List[BvmRow]:
    """
    Distance between the toy posterior and N(theta_hat_T, 2 / T)

    Datasets are nested prefixes of one sample of size max(T_list) drawn from
    stream (seed, 0); theta_hat_T is the sample mean. Reports the L1 distance
    and TV = L1 / 2.
    """
    if not T_list:
        return []
    if min(T_list) < 1:
        raise ValueError("data sizes must be >= 1")
    y_all = toy_simulate(theta_bar, max(T_list), RngStream(seed, 0))

    rows = []
    for T in T_list:
        y = y_all[:T]
        theta_hat = float(np.sum(y)) / T
        post_mean, post_var = toy_posterior(y, sigma0_sq)
        l1 = _gaussian_l1(post_mean, post_var, theta_hat, 2.0 / T)
        rows.append(BvmRow(T, theta_hat, post_mean, post_var, l1, 0.5 * l1))
        logger.info(f"T={T}: TV={0.5 * l1:.3e}")
    return rows
