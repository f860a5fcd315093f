"""
pmtune
Pseudo-marginal Metropolis-Hastings engine and optimal-tuning lab
"""

from .core import CovarianceMatrix, GaussianSpec, RngStream, cholesky_factor
from .kernel import (
    ChainState,
    LimitingKernelSpec,
    PseudoMarginalModel,
    RandomWalkProposal,
    Trace,
    pm_step,
    run_chain,
    simulate_limiting_chain,
)
from .diagnostics import compute_ct, iat_obm, summarize
from .tuning import GridSpec, grid_search, recommend
from .utils import PmtuneError

__version__ = "0.1.0"
__all__ = [
    "CovarianceMatrix",
    "GaussianSpec",
    "RngStream",
    "cholesky_factor",
    "ChainState",
    "LimitingKernelSpec",
    "PseudoMarginalModel",
    "RandomWalkProposal",
    "Trace",
    "pm_step",
    "run_chain",
    "simulate_limiting_chain",
    "compute_ct",
    "iat_obm",
    "summarize",
    "GridSpec",
    "grid_search",
    "recommend",
    "PmtuneError",
]
