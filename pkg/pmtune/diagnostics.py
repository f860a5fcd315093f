"""
Chain Diagnostics
Integrated autocorrelation time by overlapping batch means, acceptance
summaries and the computing-time criterion CT = IAT / sigma^2
"""

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .kernel import Trace
from .utils import DegenerateTrace

VARIANCE_FLOOR = 1e-300


@dataclass(frozen=True)
class IatEstimate:
    """Overlapping-batch-means estimate of the integrated autocorrelation time"""
    iat: float
    asymp_var: float
    batch_len: int
    n: int

    @property
    def ess(self) -> float:
        return self.n / self.iat


def iat_obm(trace, batch_len: Optional[int] = None) -> IatEstimate:
    """
    Integrated autocorrelation time of a scalar trace

    Batches of length b overlap; their means are obtained from a cumulative
    sum of the centred trace, so the cost is linear in n. Estimates below 1
    (antithetic traces) are returned unclamped.

    Args:
        trace: Scalar trace of length n
        batch_len: Batch length b; defaults to floor(sqrt(n))

    Returns:
        IatEstimate with iat = asymp_var / sample variance

    Raises:
        ValueError: if n < 4 b
        DegenerateTrace: if the sample variance is numerically zero
    """
    x = np.asarray(trace, dtype=float).ravel()
    n = x.size
    b = int(math.isqrt(n)) if batch_len is None else int(batch_len)
    if b < 1 or n < 4 * b:
        raise ValueError(f"trace of length {n} too short for batch length {b}")

    if np.ptp(x) == 0.0:
        raise DegenerateTrace("trace is constant")
    variance = float(np.var(x, ddof=1))
    if not variance > VARIANCE_FLOOR:
        raise DegenerateTrace(f"sample variance {variance:.3e} is numerically zero")

    centred = x - x.mean()
    cumulative = np.concatenate(([0.0], np.cumsum(centred)))
    batch_means = (cumulative[b:] - cumulative[:-b]) / b
    asymp_var = n * b / ((n - b) * (n - b + 1)) * float(np.sum(batch_means ** 2))

    return IatEstimate(
        iat=asymp_var / variance,
        asymp_var=asymp_var,
        batch_len=b,
        n=n,
    )


def compute_ct(iat: float, sigma: float) -> float:
    """Computing time IAT / sigma^2; undefined for sigma = 0"""
    if not (sigma > 0 and math.isfinite(sigma)):
        raise ValueError(f"computing time needs a positive noise level, got {sigma}")
    return iat / sigma ** 2


def _columns(traces) -> Sequence[np.ndarray]:
    if isinstance(traces, np.ndarray):
        if traces.ndim == 1:
            return [traces]
        return [traces[:, i] for i in range(traces.shape[1])]
    return [np.asarray(t, dtype=float) for t in traces]


def iat_per_coordinate(traces, batch_len: Optional[int] = None) -> Tuple[float, ...]:
    columns = _columns(traces)
    if len(columns) == 0:
        raise ValueError("need at least one coordinate trace")
    lengths = {len(c) for c in columns}
    if len(lengths) != 1:
        raise ValueError(f"coordinate traces have different lengths: {sorted(lengths)}")
    return tuple(iat_obm(c, batch_len).iat for c in columns)


def iat_average(traces, batch_len: Optional[int] = None) -> float:
    """
    Sum over coordinates of the per-coordinate IAT

    Reported under the label iat_sum_over_coords; no division by d.

    Args:
        traces: (M, d) array or a sequence of d equal-length traces
        batch_len: Batch length for every coordinate

    Returns:
        Sum of IAT estimates
    """
    return float(sum(iat_per_coordinate(traces, batch_len)))


@dataclass(frozen=True)
class TraceSummary:
    """Moments and diagnostics of one trace (first coordinate for moments)"""
    n: int
    mean: float
    variance: float
    acceptance_rate: float
    iat: float
    ess: float
    ct: Optional[float] = None
    coordinate_iats: Tuple[float, ...] = field(default_factory=tuple)

    @property
    def iat_label(self) -> str:
        return "iat_sum_over_coords" if len(self.coordinate_iats) > 1 else "iat"

    def as_dict(self) -> dict:
        payload = asdict(self)
        payload["iat_label"] = self.iat_label
        return payload


def summarize(
    trace: Union[Trace, np.ndarray],
    sigma: Optional[float] = None,
    batch_len: Optional[int] = None,
) -> TraceSummary:
    """
    Moments, acceptance rate, IAT, ESS and optionally CT of a trace

    Args:
        trace: Trace (or bare array of values, acceptance then NaN)
        sigma: Noise level used for CT; omitted when None
        batch_len: Batch length passed to the IAT estimator

    Returns:
        TraceSummary

    Raises:
        ValueError: on an empty trace
        DegenerateTrace: propagated from the IAT estimator
    """
    if isinstance(trace, Trace):
        values = trace.f_values
        acceptance = trace.acceptance_rate
    else:
        values = np.asarray(trace, dtype=float)
        acceptance = float("nan")
    if len(values) == 0:
        raise ValueError("cannot summarize an empty trace")

    coordinate_iats = iat_per_coordinate(values, batch_len)
    iat = float(sum(coordinate_iats))
    first = values if values.ndim == 1 else values[:, 0]

    return TraceSummary(
        n=len(first),
        mean=float(np.mean(first)),
        variance=float(np.var(first, ddof=1)),
        acceptance_rate=acceptance,
        iat=iat,
        ess=len(first) / iat,
        ct=compute_ct(iat, sigma) if sigma is not None else None,
        coordinate_iats=coordinate_iats,
    )
