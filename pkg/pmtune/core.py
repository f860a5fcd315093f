"""
Core Numerics
Seeded splittable random streams, covariance factorisation, Gaussian
evaluation/sampling and log-space reductions
"""

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp as _scipy_logsumexp

from .utils import NotPositiveDefinite

LOG_2PI = math.log(2.0 * math.pi)
SYMMETRY_TOL = 1e-12
PIVOT_TOL = 1e-14
_UINT64 = (1 << 64) - 1

StreamKey = Union[int, Sequence[int]]


class RngStream:
    """
    Reproducible random stream addressed by (seed, stream_id)

    Backed by the counter-based Philox generator. The stream id is a tuple
    of non-negative integers (for example (cell_index, replicate_index)),
    so independent consumers get independent streams without coordination.
    A stream has a single owner; never share one between concurrent workers.
    """

    def __init__(self, seed: int, stream_id: StreamKey = ()):
        if seed < 0 or seed > _UINT64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        if isinstance(stream_id, (int, np.integer)):
            stream_id = (int(stream_id),)
        key = tuple(int(s) for s in stream_id)
        if any(s < 0 or s > _UINT64 for s in key):
            raise ValueError(f"stream_id entries must be 64-bit unsigned, got {key}")

        self.seed = int(seed)
        self.stream_id: Tuple[int, ...] = key
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    def child(self, *key: int) -> "RngStream":
        """Independent sub-stream addressed by this stream's id extended by key"""
        return RngStream(self.seed, self.stream_id + tuple(int(k) for k in key))

    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def random(self, size=None):
        return self.generator.random(size)

    def log_uniform(self, size=None):
        """log U with U ~ Uniform(0, 1); -inf when U is exactly zero"""
        with np.errstate(divide="ignore"):
            return np.log(self.generator.random(size))

    def exponential(self, scale=1.0, size=None):
        return self.generator.exponential(scale, size)

    def standard_t(self, df, size=None):
        return self.generator.standard_t(df, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def binomial(self, n, p, size=None):
        return self.generator.binomial(n, p, size)

    def poisson(self, lam, size=None):
        return self.generator.poisson(lam, size)

    def multinomial(self, n, pvals, size=None):
        return self.generator.multinomial(n, pvals, size)


def cholesky_factor(S) -> np.ndarray:
    """
    Lower-triangular Cholesky factor of a symmetric positive definite matrix

    The pivot test is relative to the largest diagonal entry so that a
    uniformly tiny covariance (a vanishing random-walk step) still factors,
    while near-singular estimates from short pilot runs fail loudly.

    Args:
        S: Symmetric d x d matrix (d >= 1)

    Returns:
        L with L @ L.T == S and strictly positive diagonal

    Raises:
        NotPositiveDefinite: if any pivot is <= 1e-14 relative to the scale
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    if np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
        raise ValueError("matrix is not symmetric")

    scale = float(np.max(np.abs(np.diag(S))))
    if scale == 0.0:
        raise NotPositiveDefinite("matrix has an all-zero diagonal")

    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"Cholesky factorisation failed: {exc}") from exc

    pivots = np.diag(L) ** 2
    if not np.all(np.isfinite(pivots)) or np.any(pivots <= PIVOT_TOL * scale):
        raise NotPositiveDefinite(
            f"smallest pivot {pivots.min():.3e} below tolerance for scale {scale:.3e}"
        )
    return L


class CovarianceMatrix:
    """Symmetric positive definite matrix with a cached Cholesky factor"""

    def __init__(self, entries):
        S = np.atleast_2d(np.asarray(entries, dtype=float))
        if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 1:
            raise ValueError(f"covariance must be square, got shape {S.shape}")
        if np.max(np.abs(S - S.T)) > SYMMETRY_TOL:
            raise ValueError("covariance is not symmetric")
        self.entries = S

    def __repr__(self) -> str:
        return f"CovarianceMatrix(dim={self.dim})"

    @classmethod
    def identity(cls, dim: int) -> "CovarianceMatrix":
        return cls(np.eye(dim))

    @classmethod
    def diagonal(cls, variances) -> "CovarianceMatrix":
        return cls(np.diag(np.atleast_1d(np.asarray(variances, dtype=float))))

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @cached_property
    def chol(self) -> np.ndarray:
        return cholesky_factor(self.entries)

    @property
    def log_det(self) -> float:
        return float(2.0 * np.sum(np.log(np.diag(self.chol))))

    def scaled(self, factor: float) -> "CovarianceMatrix":
        """Covariance multiplied by a positive scalar (factor reused)"""
        if factor <= 0:
            raise ValueError(f"scale factor must be positive, got {factor}")
        scaled = CovarianceMatrix(factor * self.entries)
        if "chol" in self.__dict__:
            scaled.__dict__["chol"] = math.sqrt(factor) * self.chol
        return scaled

    def solve_lower(self, b) -> np.ndarray:
        """Solve L x = b with L the Cholesky factor"""
        return solve_triangular(self.chol, b, lower=True)


@dataclass(frozen=True)
class GaussianSpec:
    """Multivariate normal N(mean, cov)"""
    mean: np.ndarray
    cov: CovarianceMatrix

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "mean", mean)
        if mean.shape != (self.cov.dim,):
            raise ValueError(
                f"mean has shape {mean.shape}, covariance has dim {self.cov.dim}"
            )

    @property
    def dim(self) -> int:
        return self.cov.dim


def mvn_logpdf(x, spec: GaussianSpec):
    """
    Log-density of N(mean, cov) at x

    Args:
        x: Point of shape (d,) or a batch of shape (n, d)
        spec: Gaussian specification

    Returns:
        Scalar log-density, or array of n log-densities for a batch
    """
    x = np.asarray(x, dtype=float)
    diff = x - spec.mean
    if diff.shape[-1] != spec.dim:
        raise ValueError(f"point dimension {diff.shape[-1]} != {spec.dim}")
    whitened = spec.cov.solve_lower(diff.T)
    maha = np.sum(whitened ** 2, axis=0)
    logpdf = -0.5 * (spec.dim * LOG_2PI + spec.cov.log_det + maha)
    if x.ndim == 1:
        return float(logpdf)
    return logpdf


def mvn_sample(spec: GaussianSpec, rng: RngStream, size: Optional[int] = None):
    """
    Draw mean + L xi with xi standard normal

    Args:
        spec: Gaussian specification
        rng: Random stream (consumed)
        size: Number of draws; None for a single vector

    Returns:
        Array of shape (d,) or (size, d)
    """
    L = spec.cov.chol
    if size is None:
        return spec.mean + L @ rng.standard_normal(spec.dim)
    xi = rng.standard_normal((size, spec.dim))
    return spec.mean + xi @ L.T


def logsumexp(v, axis=None):
    """
    Stable log(sum(exp(v))) by max-shift; -inf when every entry is -inf

    Args:
        v: Non-empty array of log-weights
        axis: Reduction axis (None reduces everything)

    Returns:
        Scalar (axis None) or reduced array
    """
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("logsumexp of an empty vector")
    with np.errstate(divide="ignore", invalid="ignore"):
        result = _scipy_logsumexp(v, axis=axis)
    if axis is None:
        return float(result)
    return result


def sample_covariance(samples) -> CovarianceMatrix:
    """Covariance of preliminary-run samples (rows are draws)"""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    if samples.shape[0] < 2:
        raise ValueError("need at least two samples to estimate a covariance")
    S = np.atleast_2d(np.cov(samples, rowvar=False))
    return CovarianceMatrix(0.5 * (S + S.T))
