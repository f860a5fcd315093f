"""
Configuration Module
"""

from .settings import settings, tuning_defaults, toy_defaults, glmm_defaults, lv_defaults, clt_defaults
from .experiments import load_experiment_config

__all__ = [
    "settings",
    "tuning_defaults",
    "toy_defaults",
    "glmm_defaults",
    "lv_defaults",
    "clt_defaults",
    "load_experiment_config",
]
