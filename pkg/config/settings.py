"""
Configuration Settings
Centralized configuration management for pmtune
"""

from pydantic_settings import BaseSettings
from typing import Optional, List
from functools import lru_cache


class Settings(BaseSettings):
    """Application settings"""

    # Run Settings
    seed: int = 0
    workers: int = 1
    output_dir: str = "results"

    # API Settings
    api_title: str = "pmtune"
    api_version: str = "0.1.0"
    api_description: str = "Pseudo-marginal MCMC tuning lab"
    api_max_iterations: int = 1_000_000

    # Server Settings
    host: str = "0.0.0.0"
    port: int = 8000
    reload: bool = False

    # Logging Settings
    log_level: str = "INFO"
    log_format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    log_file: Optional[str] = None

    model_config = {
        "env_prefix": "PMTUNE_",
        "env_file": ".env",
        "env_file_encoding": "utf-8",
        "case_sensitive": False,
        "extra": "ignore",
    }


class TuningDefaults(BaseSettings):
    """Grid search over the limiting kernel"""

    # Grid around the recommended pair
    ell_min: float = 1.6
    ell_max: float = 2.6
    ell_step: float = 0.2
    sigma_halfwidth: float = 0.3
    sigma_step: float = 0.1

    # Budget
    M: int = 200_000
    replicates: int = 3
    burn_in_fraction: float = 0.1

    model_config = {
        "env_prefix": "TUNING_",
        "env_file": ".env",
        "extra": "ignore",
    }


class ToyDefaults(BaseSettings):
    """Normal latent-variable toy experiment"""

    theta_bar: float = 0.5
    sigma0_sq: float = 1e10
    ell: float = 2.0
    T: int = 20
    N_list: List[int] = [6, 8, 10, 12]
    M: int = 250_000
    sigma_reps: int = 1000

    model_config = {
        "env_prefix": "TOY_",
        "env_file": ".env",
        "extra": "ignore",
    }


class GlmmDefaults(BaseSettings):
    """Simulated random-intercept GLMM study"""

    family: str = "logistic"
    T: int = 250
    J: int = 4
    p: int = 8
    beta: List[float] = [0.2, -0.4, 0.3, 0.0, 0.5, -0.2, 0.1, -0.3]
    tau: float = 1.0
    N_list: List[int] = [12, 15, 18, 21, 24, 27, 30, 33]
    M: int = 100_000
    ell: float = 2.2

    # Preliminary run at large N
    pilot_M: int = 10_000
    pilot_N: int = 64
    sigma_reps: int = 200

    # Priors
    beta_prior_sd: float = 10.0
    tau2_prior_shape: float = 2.0
    tau2_prior_scale: float = 1.0

    # Importance proposal
    proposal: str = "gaussian_at_mode"
    nu: float = 5.0

    model_config = {
        "env_prefix": "GLMM_",
        "env_file": ".env",
        "extra": "ignore",
    }


class LvDefaults(BaseSettings):
    """Lotka-Volterra particle filter experiment"""

    beta: List[float] = [1.0, 0.005, 0.6]
    x0: List[int] = [50, 100]
    T: int = 50
    obs_sd: float = 10.0
    N_list: List[int] = [100, 125, 150, 175, 200, 225, 250, 275, 300, 325, 350]
    M: int = 50_000
    ell: float = 2.17
    pilot_M: int = 2_000
    sigma_reps: int = 100
    resampling: str = "multinomial"

    model_config = {
        "env_prefix": "LV_",
        "env_file": ".env",
        "extra": "ignore",
    }


class CltDefaults(BaseSettings):
    """Noise CLT proxies and posterior concentration"""

    theta_bar: float = 0.5
    gamma: float = 1.0
    T_list: List[int] = [25, 100, 400]
    reps: int = 2000
    bvm_sigma0_sq: float = 1.0
    bvm_T_list: List[int] = [10, 100, 1000]

    model_config = {
        "env_prefix": "CLT_",
        "env_file": ".env",
        "extra": "ignore",
    }


@lru_cache()
def get_settings() -> Settings:
    """Get cached settings instance"""
    return Settings()


@lru_cache()
def get_tuning_defaults() -> TuningDefaults:
    return TuningDefaults()


@lru_cache()
def get_toy_defaults() -> ToyDefaults:
    return ToyDefaults()


@lru_cache()
def get_glmm_defaults() -> GlmmDefaults:
    return GlmmDefaults()


@lru_cache()
def get_lv_defaults() -> LvDefaults:
    return LvDefaults()


@lru_cache()
def get_clt_defaults() -> CltDefaults:
    return CltDefaults()


# Export commonly used settings
settings = get_settings()
tuning_defaults = get_tuning_defaults()
toy_defaults = get_toy_defaults()
glmm_defaults = get_glmm_defaults()
lv_defaults = get_lv_defaults()
clt_defaults = get_clt_defaults()
