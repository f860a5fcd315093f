"""
Utility Functions
Error hierarchy, result writers and run metadata shared by all experiments
"""

import json
import logging
import platform
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

# 17 significant digits round-trip every IEEE double
FLOAT_FORMAT = "%.17g"


class PmtuneError(Exception):
    """Base class for all numerical failures raised by pmtune"""


class NotPositiveDefinite(PmtuneError):
    """Covariance matrix failed the Cholesky pivot test"""


class EstimatorFailure(PmtuneError):
    """A likelihood estimator returned NaN (model bug, never treated as zero)"""


class InitializationFailure(EstimatorFailure):
    """No finite likelihood estimate found at the initial parameter"""


class DegenerateTrace(PmtuneError):
    """Trace has (numerically) zero variance; IAT is undefined"""


class NonConvergence(PmtuneError):
    """Iterative solver did not reach its tolerance"""


class ConditionViolated(PmtuneError):
    """Moment condition of an importance proposal does not hold"""


class BudgetExceeded(PmtuneError):
    """Stochastic simulation exceeded its event budget"""


class ConfigError(Exception):
    """Invalid experiment configuration"""


def to_jsonable(value: Any) -> Any:
    """
    Convert numpy scalars/arrays and tuples into plain JSON types

    Args:
        value: Arbitrary nested structure

    Returns:
        Structure made of dict/list/float/int/str/bool/None
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        value = float(value)
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Write a frame with a header row and 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def write_json(payload: Dict[str, Any], path: Path) -> Path:
    """Write a JSON document with sorted keys"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass
class RunRecord:
    """Metadata echoed next to every experiment output"""
    command: str
    config: Dict[str, Any]
    seed: int
    version: str
    started_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat()
    )
    wall_time_s: Optional[float] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "version": self.version,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "started_at": self.started_at,
            "wall_time_s": self.wall_time_s,
            "extra": self.extra,
        }


class Stopwatch:
    """Wall-clock timer used for run metadata"""

    def __init__(self):
        self._start = time.perf_counter()

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self._start
