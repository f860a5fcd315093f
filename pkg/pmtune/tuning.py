"""
Scaling and Noise Tuning
Grid minimisation of the computing time CT(ell, sigma) of the limiting
kernel, reference optima by dimension and the practical tuning recipe
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .core import RngStream, sample_covariance
from .diagnostics import compute_ct, iat_obm
from .kernel import LimitingKernelSpec, RandomWalkProposal, simulate_limiting_chain
from .utils import DegenerateTrace

logger = logging.getLogger(__name__)

MIN_ITERATIONS = 10_000
ELL_INF = 2.56
SIGMA_INF = 1.81


@dataclass(frozen=True)
class ReferenceOptimum:
    """Optimal (ell, sigma) of the limiting kernel for one dimension"""
    d: int
    ell: float
    sigma: float
    ct: float
    acceptance: float


REFERENCE_OPTIMA: Tuple[ReferenceOptimum, ...] = (
    ReferenceOptimum(1, 2.05, 1.16, 8.47, 0.2573),
    ReferenceOptimum(2, 1.97, 1.21, 12.71, 0.2292),
    ReferenceOptimum(3, 2.11, 1.24, 16.79, 0.1997),
    ReferenceOptimum(5, 2.17, 1.30, 23.18, 0.1735),
    ReferenceOptimum(10, 2.20, 1.44, 37.93, 0.1427),
    ReferenceOptimum(15, 2.33, 1.50, 53.43, 0.1207),
    ReferenceOptimum(20, 2.34, 1.54, 65.62, 0.1144),
    ReferenceOptimum(30, 2.36, 1.61, 90.46, 0.1041),
    ReferenceOptimum(50, 2.41, 1.74, 136.38, 0.0866),
)

# CT at ell_inf for sigma = sigma_opt(d), 1.2 and sigma_inf
REFERENCE_CT: Dict[int, Tuple[float, float, float]] = {
    1: (9.04, 9.05, 17.10),
    2: (13.48, 13.37, 22.45),
    3: (17.63, 17.43, 26.71),
    5: (24.38, 24.72, 34.14),
    10: (40.17, 41.60, 47.08),
    15: (53.69, 58.01, 59.08),
    20: (67.15, 74.34, 71.41),
    30: (91.36, 106.08, 93.73),
    50: (136.49, 167.83, 135.92),
}


def recommend(d: float) -> Tuple[float, float]:
    """
    Recommended (ell, sigma) for parameter dimension d

    Piecewise-linear in d between tabulated dimensions, exact at them, and
    (ELL_INF, SIGMA_INF) beyond d = 50.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if d > REFERENCE_OPTIMA[-1].d:
        return ELL_INF, SIGMA_INF
    dims = [row.d for row in REFERENCE_OPTIMA]
    ell = float(np.interp(d, dims, [row.ell for row in REFERENCE_OPTIMA]))
    sigma = float(np.interp(d, dims, [row.sigma for row in REFERENCE_OPTIMA]))
    return ell, sigma


@dataclass(frozen=True)
class GridSpec:
    """
    Grid over (ell, sigma) for the limiting kernel in dimension d

    Cells are enumerated sigma-major: cell index = i_sigma * len(ell_grid) + i_ell.
    """
    d: int
    ell_grid: Tuple[float, ...]
    sigma_grid: Tuple[float, ...]
    M: int
    replicates: int = 1
    seed: int = 0
    workers: int = 1
    burn_in_fraction: float = 0.1

    def __post_init__(self):
        ell_grid = tuple(sorted(set(float(v) for v in self.ell_grid)))
        sigma_grid = tuple(sorted(set(float(v) for v in self.sigma_grid)))
        object.__setattr__(self, "ell_grid", ell_grid)
        object.__setattr__(self, "sigma_grid", sigma_grid)
        if self.d < 1:
            raise ValueError(f"dimension must be >= 1, got {self.d}")
        if not ell_grid or not sigma_grid:
            raise ValueError("ell and sigma grids must be non-empty")
        if ell_grid[0] <= 0 or sigma_grid[0] <= 0:
            raise ValueError("grid values must be positive")
        if self.M < MIN_ITERATIONS:
            raise ValueError(f"M must be >= {MIN_ITERATIONS} for a usable IAT, got {self.M}")
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if not 0 <= self.burn_in_fraction < 1:
            raise ValueError(f"burn_in_fraction must be in [0, 1), got {self.burn_in_fraction}")

    @property
    def burn_in(self) -> int:
        return int(self.M * self.burn_in_fraction)

    @property
    def n_cells(self) -> int:
        return len(self.ell_grid) * len(self.sigma_grid)

    def cells(self) -> List[Tuple[int, float, float]]:
        """(cell_index, ell, sigma) in sigma-major order"""
        return [
            (i_sigma * len(self.ell_grid) + i_ell, ell, sigma)
            for i_sigma, sigma in enumerate(self.sigma_grid)
            for i_ell, ell in enumerate(self.ell_grid)
        ]

    def describe(self) -> dict:
        payload = asdict(self)
        payload["burn_in"] = self.burn_in
        payload["stream_id"] = "(cell_index, replicate)"
        return payload


@dataclass(frozen=True)
class CellTask:
    d: int
    ell: float
    sigma: float
    M: int
    burn_in: int
    seed: int
    cell_index: int
    replicate: int


@dataclass(frozen=True)
class CellRecord:
    """Outcome of one (cell, replicate) limiting-chain run"""
    d: int
    ell: float
    sigma: float
    replicate: int
    cell_index: int
    ct: float
    iat: float
    acc: float
    degenerate: bool = False


def _run_cell(task: CellTask) -> CellRecord:
    spec = LimitingKernelSpec(task.ell, task.sigma, dim=task.d)
    rng = RngStream(task.seed, (task.cell_index, task.replicate))
    trace = simulate_limiting_chain(spec, task.M, rng, burn_in=task.burn_in)
    try:
        iat = iat_obm(trace.f_values).iat
        ct = compute_ct(iat, task.sigma)
        degenerate = False
    except DegenerateTrace as exc:
        logger.warning(
            f"Degenerate trace at ell={task.ell}, sigma={task.sigma}, "
            f"replicate {task.replicate}: {exc}"
        )
        iat, ct, degenerate = math.nan, math.nan, True
    return CellRecord(
        d=task.d,
        ell=task.ell,
        sigma=task.sigma,
        replicate=task.replicate,
        cell_index=task.cell_index,
        ct=ct,
        iat=iat,
        acc=trace.acceptance_rate,
        degenerate=degenerate,
    )


def _execute(tasks: Sequence[CellTask], workers: int) -> List[CellRecord]:
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_cell, tasks, chunksize=1))
    return [_run_cell(task) for task in tasks]


@dataclass(frozen=True)
class CellSummary:
    ell: float
    sigma: float
    ct_mean: float
    ct_sd: float
    acc_mean: float


@dataclass
class GridResult:
    """Per-replicate records of a grid search and their aggregates"""
    spec: GridSpec
    records: List[CellRecord]

    def to_frame(self) -> pd.DataFrame:
        """One row per (cell, replicate): d, ell, sigma, replicate, ct, iat, acc"""
        frame = pd.DataFrame([asdict(r) for r in self.records])
        frame = frame.sort_values(["cell_index", "replicate"], kind="stable")
        return frame[["d", "ell", "sigma", "replicate", "ct", "iat", "acc"]].reset_index(drop=True)

    def cell_table(self) -> pd.DataFrame:
        """Mean/sd CT and mean acceptance per cell, sigma-major order"""
        frame = pd.DataFrame([asdict(r) for r in self.records])
        grouped = frame.groupby("cell_index", sort=True)
        table = pd.DataFrame({
            "ell": grouped["ell"].first(),
            "sigma": grouped["sigma"].first(),
            # NaN if any replicate was degenerate
            "ct_mean": grouped["ct"].apply(lambda s: s.mean(skipna=False)),
            "ct_sd": grouped["ct"].apply(lambda s: s.std(ddof=1, skipna=False) if len(s) > 1 else 0.0),
            "acc_mean": grouped["acc"].mean(),
        })
        return table.reset_index()

    @property
    def cells(self) -> List[CellSummary]:
        return [
            CellSummary(row.ell, row.sigma, row.ct_mean, row.ct_sd, row.acc_mean)
            for row in self.cell_table().itertuples(index=False)
        ]

    @property
    def argmin(self) -> CellSummary:
        """
        Cell with the smallest mean CT; ties go to the smallest (sigma, ell)

        Raises:
            DegenerateTrace: if no cell has a finite CT
        """
        table = self.cell_table()
        valid = table[np.isfinite(table["ct_mean"])]
        excluded = len(table) - len(valid)
        if excluded:
            logger.warning(f"{excluded} cell(s) excluded from the argmin (degenerate traces)")
        if valid.empty:
            raise DegenerateTrace("every grid cell produced a degenerate trace")
        row = valid.loc[valid["ct_mean"].idxmin()]
        return CellSummary(row.ell, row.sigma, row.ct_mean, row.ct_sd, row.acc_mean)

    def replicate_minimizers(self) -> List[Tuple[float, float]]:
        """(ell, sigma) minimising CT within each replicate"""
        frame = pd.DataFrame([asdict(r) for r in self.records])
        minimizers = []
        for replicate in range(self.spec.replicates):
            rows = frame[(frame["replicate"] == replicate) & np.isfinite(frame["ct"])]
            if rows.empty:
                continue
            rows = rows.sort_values("cell_index", kind="stable")
            best = rows.loc[rows["ct"].idxmin()]
            minimizers.append((float(best["ell"]), float(best["sigma"])))
        return minimizers

    def summary(self) -> dict:
        best = self.argmin
        minimizers = np.array(self.replicate_minimizers())
        spread = (
            minimizers.std(axis=0, ddof=1) if len(minimizers) > 1 else np.zeros(2)
        )
        return {
            "d": self.spec.d,
            "ell_opt": best.ell,
            "sigma_opt": best.sigma,
            "ct_opt": best.ct_mean,
            "argmin": asdict(best),
            "table1_style_row": {
                "d": self.spec.d,
                "ell_opt_mean": float(minimizers[:, 0].mean()),
                "ell_opt_sd": float(spread[0]),
                "sigma_opt_mean": float(minimizers[:, 1].mean()),
                "sigma_opt_sd": float(spread[1]),
                "ct": best.ct_mean,
                "acceptance": best.acc_mean,
            },
            "replicate_minimizers": minimizers.tolist(),
            "grid": self.spec.describe(),
        }


def grid_search(spec: GridSpec) -> GridResult:
    """
    Estimate CT(ell, sigma) on every cell and replicate of the grid

    Each (cell, replicate) pair runs the limiting chain from its stationary
    start on stream RngStream(seed, (cell_index, replicate)), so the result
    does not depend on the number of workers.
    """
    tasks = [
        CellTask(spec.d, ell, sigma, spec.M, spec.burn_in, spec.seed, index, rep)
        for index, ell, sigma in spec.cells()
        for rep in range(spec.replicates)
    ]
    logger.info(
        f"Grid search d={spec.d}: {spec.n_cells} cells x {spec.replicates} replicates, "
        f"M={spec.M}, workers={spec.workers}"
    )
    records = _execute(tasks, spec.workers)
    return GridResult(spec, records)


@dataclass(frozen=True)
class CtEstimate:
    """CT at a single (ell, sigma) across replicates"""
    d: int
    ell: float
    sigma: float
    ct_mean: float
    ct_sd: float
    acceptance: float
    iat_mean: float
    replicates: int


def ct_at(
    d: int,
    ell: float,
    sigma: float,
    M: int,
    replicates: int = 1,
    seed: int = 0,
    workers: int = 1,
) -> CtEstimate:
    """CT estimate at one (ell, sigma); sigma must be positive"""
    if not sigma > 0:
        raise ValueError(f"CT needs sigma > 0, got {sigma}")
    result = grid_search(GridSpec(d, (ell,), (sigma,), M, replicates, seed, workers))
    frame = result.to_frame()
    cell = result.cells[0]
    return CtEstimate(
        d=d,
        ell=ell,
        sigma=sigma,
        ct_mean=cell.ct_mean,
        ct_sd=cell.ct_sd,
        acceptance=cell.acc_mean,
        iat_mean=float(frame["iat"].mean()),
        replicates=replicates,
    )


def noise_comparison(
    d: int,
    M: int,
    replicates: int = 1,
    seed: int = 0,
    workers: int = 1,
    ell: float = ELL_INF,
) -> Dict[str, CtEstimate]:
    """CT at ell_inf for the recommended sigma, sigma = 1.2 and sigma_inf"""
    sigma_opt = recommend(d)[1]
    levels = {"sigma_opt": sigma_opt, "sigma_1_2": 1.2, "sigma_inf": SIGMA_INF}
    return {
        name: ct_at(d, ell, sigma, M, replicates, seed, workers)
        for name, sigma in levels.items()
    }


def tuned_proposal(samples, ell: Optional[float] = None) -> RandomWalkProposal:
    """
    Random walk with covariance ell^2 Sigma_hat / d from preliminary samples

    ell defaults to the recommended value for the samples' dimension.
    """
    base = sample_covariance(samples)
    if ell is None:
        ell = recommend(base.dim)[0]
    return RandomWalkProposal(ell, base)


def choose_num_samples(
    sigma_of_n: Callable[[int], float],
    candidates: Sequence[int],
    target: float,
) -> Tuple[int, float]:
    """
    Smallest N whose log-likelihood noise sd is at most target

    Falls back to the largest candidate (with a warning) when none qualifies.

    Returns:
        (N, sigma_hat at N)
    """
    if not candidates:
        raise ValueError("no candidate sample sizes")
    sigma = math.nan
    for n in sorted(candidates):
        sigma = sigma_of_n(n)
        logger.info(f"N={n}: sigma_hat={sigma:.4f} (target {target:.4f})")
        if sigma <= target:
            return n, sigma
    n = max(candidates)
    logger.warning(f"No candidate reaches sigma <= {target}; using N={n}")
    return n, sigma
