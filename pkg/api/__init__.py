"""
pmtune API
FastAPI application exposing the cheap tuning operations
"""

from .main import app

__all__ = ["app"]
