"""
API Schemas
Pydantic models for request/response validation
"""

import math
from pydantic import BaseModel, Field, field_validator
from typing import List, Optional


class RecommendResponse(BaseModel):
    """Recommended scaling and noise level for a dimension"""
    d: float = Field(..., description="Parameter dimension")
    ell: float = Field(..., description="Recommended random-walk scaling")
    sigma: float = Field(..., description="Recommended log-likelihood noise sd")

    model_config = {
        "json_schema_extra": {
            "example": {"d": 10, "ell": 2.2, "sigma": 1.44}
        }
    }


class CtRequest(BaseModel):
    """Request schema for a single-cell CT estimate on the limiting kernel"""
    d: int = Field(..., ge=1, description="Parameter dimension")
    ell: float = Field(..., gt=0, description="Random-walk scaling")
    sigma: float = Field(..., gt=0, description="Noise level")
    M: int = Field(100_000, ge=10_000, description="Recorded iterations per replicate")
    replicates: int = Field(1, ge=1, le=20)
    seed: int = Field(0, ge=0)

    model_config = {
        "json_schema_extra": {
            "example": {"d": 1, "ell": 2.56, "sigma": 1.81, "M": 100000, "replicates": 1, "seed": 0}
        }
    }


class CtResponse(BaseModel):
    """Response schema for a CT estimate"""
    d: int
    ell: float
    sigma: float
    ct_mean: float
    ct_sd: float
    acceptance: float
    iat_mean: float
    replicates: int
    processing_time_ms: float


class IatRequest(BaseModel):
    """Trace of scalar test-function values"""
    values: List[float] = Field(..., min_length=4, description="Trace values in chain order")
    batch_len: Optional[int] = Field(None, ge=1, description="Batch length (default floor(sqrt(n)))")
    sigma: Optional[float] = Field(None, gt=0, description="Noise level for CT")

    @field_validator("values")
    @classmethod
    def values_finite(cls, v):
        if not all(math.isfinite(x) for x in v):
            raise ValueError("trace values must be finite")
        return v


class IatResponse(BaseModel):
    """Overlapping batch means estimate"""
    iat: float
    asymp_var: float
    batch_len: int
    n: int
    ess: float
    ct: Optional[float] = None


class ToyNoiseRequest(BaseModel):
    """Noise level of the toy importance sampler on simulated data"""
    theta_bar: float = Field(0.5, description="Data-generating parameter")
    T: int = Field(20, ge=1, le=100_000, description="Number of observations")
    N: int = Field(..., ge=1, le=100_000, description="Samples per observation")
    reps: int = Field(200, ge=2, le=10_000)
    theta: Optional[float] = Field(None, description="Evaluation point (default posterior mean)")
    seed: int = Field(0, ge=0)

    model_config = {
        "json_schema_extra": {
            "example": {"theta_bar": 0.5, "T": 20, "N": 12, "reps": 200, "seed": 0}
        }
    }


class ToyNoiseResponse(BaseModel):
    theta: float
    sigma_hat: Optional[float] = Field(..., description="None when some estimate was zero")
    exact_loglik: float
    posterior_mean: float
    posterior_var: float


class HealthResponse(BaseModel):
    """Health check response"""
    status: str = Field(..., description="Service status")
    version: str = Field(..., description="API version")
    timestamp: str = Field(..., description="Current UTC timestamp")


class ErrorResponse(BaseModel):
    """Error response schema"""
    error: str = Field(..., description="Error type")
    message: str = Field(..., description="Error message")
    timestamp: str = Field(..., description="UTC timestamp")
