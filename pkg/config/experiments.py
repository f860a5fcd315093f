"""
Experiment Configuration
Validated per-subcommand configs, presets and the preset < file < flags merge
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from pmtune.utils import ConfigError
from .settings import (
    get_clt_defaults,
    get_glmm_defaults,
    get_lv_defaults,
    get_settings,
    get_toy_defaults,
    get_tuning_defaults,
)

logger = logging.getLogger(__name__)

PRESET_NAMES = ("smoke", "desk", "paper")


class GlobalOptions(BaseModel):
    """Keys shared by every subcommand"""
    seed: int = Field(0, ge=0, description="Root seed of every random stream")
    workers: int = Field(1, ge=1, description="Worker processes")
    output_dir: str = Field("results", min_length=1, description="Output directory")

    model_config = {"extra": "forbid"}


def _positive_sizes(values: List[int], name: str) -> List[int]:
    if not values:
        raise ValueError(f"{name} must not be empty")
    if min(values) < 1:
        raise ValueError(f"{name} entries must be >= 1")
    return values


class TuneConfig(GlobalOptions):
    """Grid search of CT over (ell, sigma) for the limiting kernel"""
    d: int = Field(..., ge=1, description="Parameter dimension")
    ell_grid: Optional[List[float]] = Field(None, description="Scalings (default: around 2.0)")
    sigma_grid: Optional[List[float]] = Field(None, description="Noise levels (default: recommended +- 0.3)")
    M: int = Field(200_000, ge=10_000, description="Recorded iterations per run")
    replicates: int = Field(3, ge=1)
    burn_in_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    single_cell: bool = False
    ell: Optional[float] = Field(None, gt=0)
    sigma: Optional[float] = Field(None, gt=0)

    @field_validator("ell_grid", "sigma_grid")
    @classmethod
    def grid_positive(cls, v):
        if v is not None and (not v or min(v) <= 0):
            raise ValueError("grid must be non-empty with positive values")
        return v

    @model_validator(mode="after")
    def single_cell_needs_point(self):
        if self.single_cell and (self.ell is None or self.sigma is None):
            raise ValueError("single_cell needs both ell and sigma")
        return self

    def grids(self) -> Tuple[List[float], List[float]]:
        """Resolved (ell_grid, sigma_grid)"""
        from pmtune.tuning import recommend

        if self.single_cell:
            return [self.ell], [self.sigma]
        defaults = get_tuning_defaults()
        ell_grid = self.ell_grid or _arange(defaults.ell_min, defaults.ell_max, defaults.ell_step)
        if self.sigma_grid:
            return ell_grid, self.sigma_grid
        centre = recommend(self.d)[1]
        sigma_grid = _arange(
            max(centre - defaults.sigma_halfwidth, defaults.sigma_step),
            centre + defaults.sigma_halfwidth,
            defaults.sigma_step,
        )
        return ell_grid, sigma_grid


class ToyConfig(GlobalOptions):
    """Pseudo-marginal vs limiting chain on the normal toy model"""
    theta_bar: float = 0.5
    sigma0_sq: float = Field(1e10, gt=0)
    ell: float = Field(2.0, gt=0)
    T: int = Field(20, ge=1)
    N_list: List[int]
    M: int = Field(250_000, ge=1)
    sigma_reps: int = Field(1000, ge=2)
    burn_in: Optional[int] = Field(None, ge=0)

    @field_validator("N_list")
    @classmethod
    def sizes(cls, v):
        return _positive_sizes(v, "N_list")


class GlmmConfig(GlobalOptions):
    """Simulated random-intercept GLMM with importance-sampled likelihood"""
    family: Literal["logistic", "binomial", "poisson"] = "logistic"
    n_trials: int = Field(1, ge=1)
    T: int = Field(250, ge=1)
    J: int = Field(4, ge=1)
    p: int = Field(8, ge=1)
    beta: List[float]
    tau: float = Field(1.0, gt=0)
    N_list: List[int]
    M: int = Field(100_000, ge=1)
    ell: float = Field(2.2, gt=0)
    pilot_M: int = Field(10_000, ge=0)
    pilot_N: int = Field(64, ge=1)
    sigma_reps: int = Field(200, ge=2)
    beta_prior_sd: float = Field(10.0, gt=0)
    tau2_prior_shape: float = Field(2.0, gt=0)
    tau2_prior_scale: float = Field(1.0, gt=0)
    proposal: Literal["gaussian_at_mode", "t_at_mode"] = "gaussian_at_mode"
    nu: float = Field(5.0, gt=2.0)
    burn_in: Optional[int] = Field(None, ge=0)

    @field_validator("N_list")
    @classmethod
    def sizes(cls, v):
        return _positive_sizes(v, "N_list")

    @model_validator(mode="after")
    def beta_matches_design(self):
        if len(self.beta) != self.p:
            raise ValueError(f"beta has {len(self.beta)} entries, design has p={self.p}")
        return self


class LvConfig(GlobalOptions):
    """Particle marginal Metropolis-Hastings on Lotka-Volterra rates"""
    beta: List[float]
    x0: List[int]
    T: int = Field(50, ge=0)
    obs_sd: float = Field(10.0, gt=0)
    N_list: List[int]
    M: int = Field(50_000, ge=0)
    ell: float = Field(2.17, gt=0)
    pilot_M: int = Field(2_000, ge=0)
    sigma_reps: int = Field(100, ge=2)
    resampling: Literal["multinomial", "systematic"] = "multinomial"
    burn_in: Optional[int] = Field(None, ge=0)

    @field_validator("beta")
    @classmethod
    def three_rates(cls, v):
        if len(v) != 3 or min(v) < 0:
            raise ValueError("beta must be three non-negative rates")
        return v

    @field_validator("x0")
    @classmethod
    def two_species(cls, v):
        if len(v) != 2 or min(v) < 0:
            raise ValueError("x0 must be two non-negative counts")
        return v

    @field_validator("N_list")
    @classmethod
    def sizes(cls, v):
        return _positive_sizes(v, "N_list")


class CltConfig(GlobalOptions):
    """Moment and KS proxies for the Gaussian limit of the noise"""
    model: Literal["toy", "glmm"] = "toy"
    theta_bar: float = 0.5
    gamma: float = Field(1.0, gt=0)
    T_list: List[int]
    reps: int = Field(2000, ge=2)
    spot_check: bool = False
    delta: float = Field(1.0, gt=0)

    @field_validator("T_list")
    @classmethod
    def sizes(cls, v):
        return _positive_sizes(v, "T_list")

    @model_validator(mode="after")
    def spot_check_toy_only(self):
        if self.spot_check and self.model != "toy":
            raise ValueError("spot_check is only available for the toy model")
        return self


class BvmConfig(GlobalOptions):
    """Total variation between the toy posterior and its Gaussian limit"""
    sigma0_sq: float = Field(1.0, gt=0)
    theta_bar: float = 0.5
    T_list: List[int]

    @field_validator("T_list")
    @classmethod
    def sizes(cls, v):
        return _positive_sizes(v, "T_list")


CONFIG_TYPES: Dict[str, Type[GlobalOptions]] = {
    "tune": TuneConfig,
    "toy": ToyConfig,
    "glmm": GlmmConfig,
    "lv": LvConfig,
    "clt": CltConfig,
    "bvm": BvmConfig,
}


def _arange(lo: float, hi: float, step: float) -> List[float]:
    values = np.arange(lo, hi + 0.5 * step, step)
    return [round(float(v), 10) for v in values]


def _desk_defaults(kind: str) -> Dict[str, Any]:
    settings = get_settings()
    base = {"seed": settings.seed, "workers": settings.workers, "output_dir": settings.output_dir}
    if kind == "tune":
        tuning = get_tuning_defaults()
        base.update(M=tuning.M, replicates=tuning.replicates, burn_in_fraction=tuning.burn_in_fraction)
    elif kind == "toy":
        base.update(get_toy_defaults().model_dump())
    elif kind == "glmm":
        base.update(get_glmm_defaults().model_dump())
    elif kind == "lv":
        base.update(get_lv_defaults().model_dump())
    elif kind == "clt":
        clt = get_clt_defaults()
        base.update(theta_bar=clt.theta_bar, gamma=clt.gamma, T_list=clt.T_list, reps=clt.reps)
    elif kind == "bvm":
        clt = get_clt_defaults()
        base.update(sigma0_sq=clt.bvm_sigma0_sq, theta_bar=clt.theta_bar, T_list=clt.bvm_T_list)
    return base


PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    "tune": {
        "smoke": {"M": 10_000, "replicates": 1},
        "desk": {},
        "paper": {"M": 5_000_000, "replicates": 10},
    },
    "toy": {
        "smoke": {"M": 1_000, "N_list": [12], "sigma_reps": 50},
        "desk": {},
        "paper": {"sigma_reps": 10_000},
    },
    "glmm": {
        "smoke": {"T": 20, "M": 1_000, "N_list": [16], "pilot_M": 200, "pilot_N": 32, "sigma_reps": 20},
        "desk": {},
        "paper": {"M": 1_000_000, "sigma_reps": 1_000},
    },
    "lv": {
        "smoke": {"T": 5, "M": 100, "N_list": [50], "pilot_M": 0, "sigma_reps": 10},
        "desk": {},
        "paper": {"M": 250_000, "pilot_M": 10_000, "sigma_reps": 1_000},
    },
    "clt": {
        "smoke": {"T_list": [25, 100], "reps": 200},
        "desk": {},
        "paper": {"reps": 10_000},
    },
    "bvm": {
        "smoke": {},
        "desk": {},
        "paper": {"T_list": [10, 30, 100, 300, 1000, 3000, 10000]},
    },
}


def _read_config_file(path: Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return payload


def load_experiment_config(
    kind: str,
    preset: str = "desk",
    path: Optional[Path] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> GlobalOptions:
    """
    Build the validated config for a subcommand

    Merge order is desk defaults < preset < JSON file < overrides; None
    values in overrides are treated as absent.

    Raises:
        ConfigError: unknown subcommand or preset, unreadable file
        pydantic.ValidationError: unknown keys or out-of-range values
    """
    if kind not in CONFIG_TYPES:
        raise ConfigError(f"unknown experiment {kind!r}")
    if preset not in PRESET_NAMES:
        raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESET_NAMES)}")

    merged = _desk_defaults(kind)
    merged.update(PRESETS[kind][preset])
    if path is not None:
        merged.update(_read_config_file(Path(path)))
    merged.update({k: v for k, v in (overrides or {}).items() if v is not None})

    config = CONFIG_TYPES[kind].model_validate(merged)
    logger.debug(f"Resolved {kind} config ({preset}): {config.model_dump()}")
    return config
