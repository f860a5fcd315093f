"""
pmtune FastAPI Application
Remote access to the cheap tuning operations for experiment drivers
"""

from fastapi import FastAPI, HTTPException, Path, Request
from fastapi.responses import JSONResponse
import time
import logging
import math
from datetime import datetime, timezone

import numpy as np

from config.settings import get_settings
from pmtune import __version__
from pmtune.core import RngStream
from pmtune.diagnostics import compute_ct, iat_obm
from pmtune.estimators import estimate_sigma
from pmtune.models import ToyModel, toy_simulate
from pmtune.tuning import ct_at, recommend
from pmtune.utils import DegenerateTrace, PmtuneError, Stopwatch
from .schemas import (
    CtRequest, CtResponse,
    IatRequest, IatResponse,
    ToyNoiseRequest, ToyNoiseResponse,
    RecommendResponse, HealthResponse, ErrorResponse,
)

settings = get_settings()

# Configure logging
logging.basicConfig(level=settings.log_level.upper(), format=settings.log_format)
logger = logging.getLogger(__name__)

# Initialize FastAPI app
app = FastAPI(
    title=settings.api_title,
    description=settings.api_description,
    version=__version__,
    docs_url="/docs",
    redoc_url="/redoc",
)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


# Middleware for request timing
@app.middleware("http")
async def time_requests(request: Request, call_next):
    """Time every request and report it in the X-Process-Time-Ms header"""
    watch = Stopwatch()
    response = await call_next(request)
    elapsed_ms = watch.elapsed * 1000
    response.headers["X-Process-Time-Ms"] = f"{elapsed_ms:.2f}"

    level = logging.WARNING if response.status_code >= 400 else logging.INFO
    logger.log(level, f"{request.method} {request.url.path} -> {response.status_code} in {elapsed_ms:.2f}ms")
    return response


# Root endpoint
@app.get("/", tags=["General"])
async def root():
    """Root endpoint with API information"""
    return {
        "name": settings.api_title,
        "version": __version__,
        "description": settings.api_description,
        "documentation": "/docs",
        "health": "/health",
        "max_iterations": settings.api_max_iterations,
    }


@app.get("/health", response_model=HealthResponse, tags=["General"])
async def health_check():
    return HealthResponse(status="healthy", version=__version__, timestamp=_now())


@app.get(
    "/recommend/{d}",
    response_model=RecommendResponse,
    tags=["Tuning"],
    summary="Recommended (ell, sigma) for a dimension",
)
async def get_recommendation(d: float = Path(..., ge=1, description="Parameter dimension")):
    """
    Interpolated optimum of the computing time for dimension d

    Dimensions above the tabulated range return the high-dimensional limit.
    """
    ell, sigma = recommend(d)
    return RecommendResponse(d=d, ell=ell, sigma=sigma)


@app.post(
    "/ct",
    response_model=CtResponse,
    tags=["Tuning"],
    summary="Computing time at one (ell, sigma)",
    description="Run the limiting kernel and return IAT / sigma^2 averaged over replicates",
)
def estimate_ct(request: CtRequest):
    """
    Single-cell CT estimate

    The total budget M * replicates is capped by PMTUNE_API_MAX_ITERATIONS.
    """
    budget = request.M * request.replicates
    if budget > settings.api_max_iterations:
        raise HTTPException(
            status_code=400,
            detail=f"Budget {budget} exceeds the service limit of {settings.api_max_iterations} iterations",
        )

    start_time = time.time()
    estimate = ct_at(
        request.d, request.ell, request.sigma, request.M, request.replicates, request.seed
    )
    processing_time = (time.time() - start_time) * 1000
    if not math.isfinite(estimate.ct_mean):
        raise DegenerateTrace(
            f"no finite CT at ell={request.ell}, sigma={request.sigma}: a replicate trace was constant"
        )
    logger.info(
        f"CT d={request.d} ell={request.ell} sigma={request.sigma}: "
        f"{estimate.ct_mean:.3f} in {processing_time:.0f}ms"
    )
    return CtResponse(
        d=estimate.d,
        ell=estimate.ell,
        sigma=estimate.sigma,
        ct_mean=estimate.ct_mean,
        ct_sd=estimate.ct_sd,
        acceptance=estimate.acceptance,
        iat_mean=estimate.iat_mean,
        replicates=estimate.replicates,
        processing_time_ms=round(processing_time, 2),
    )


@app.post(
    "/diagnostics/iat",
    response_model=IatResponse,
    tags=["Diagnostics"],
    summary="IAT of a posted trace",
)
def trace_iat(request: IatRequest):
    """Overlapping batch means IAT, ESS and optionally CT of a scalar trace"""
    try:
        estimate = iat_obm(np.asarray(request.values), request.batch_len)
    except ValueError as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    ct = compute_ct(estimate.iat, request.sigma) if request.sigma is not None else None
    return IatResponse(
        iat=estimate.iat,
        asymp_var=estimate.asymp_var,
        batch_len=estimate.batch_len,
        n=estimate.n,
        ess=estimate.ess,
        ct=ct,
    )


@app.post(
    "/toy/noise",
    response_model=ToyNoiseResponse,
    tags=["Models"],
    summary="Noise level of the toy importance sampler",
)
def toy_noise(request: ToyNoiseRequest):
    """
    Simulate T observations at theta_bar (stream (seed, 0)) and return the
    sd of reps log-likelihood estimates (stream (seed, 1))
    """
    if request.T * request.N * request.reps > settings.api_max_iterations * 100:
        raise HTTPException(status_code=400, detail="Requested work exceeds the service limit")

    model = ToyModel()
    y = toy_simulate(request.theta_bar, request.T, RngStream(request.seed, 0))
    post_mean, post_var = model.posterior(y)
    theta = post_mean if request.theta is None else request.theta
    sigma_hat = estimate_sigma(model, theta, y, request.N, request.reps, RngStream(request.seed, 1))
    return ToyNoiseResponse(
        theta=theta,
        sigma_hat=sigma_hat if math.isfinite(sigma_hat) else None,
        exact_loglik=model.exact_loglik(theta, y),
        posterior_mean=post_mean,
        posterior_var=post_var,
    )


@app.exception_handler(PmtuneError)
async def numerical_exception_handler(request: Request, exc: PmtuneError):
    """Numerical failures are reported as unprocessable input"""
    logger.warning(f"{type(exc).__name__} on {request.url.path}: {exc}")
    return JSONResponse(
        status_code=422,
        content=ErrorResponse(
            error=type(exc).__name__,
            message=str(exc),
            timestamp=_now(),
        ).model_dump(),
    )


# Global exception handler
@app.exception_handler(Exception)
async def global_exception_handler(request: Request, exc: Exception):
    """Global exception handler for unhandled errors"""
    logger.error(f"Unhandled exception: {str(exc)}", exc_info=True)
    return JSONResponse(
        status_code=500,
        content=ErrorResponse(
            error="InternalServerError",
            message=str(exc),
            timestamp=_now(),
        ).model_dump(),
    )


def main():
    import uvicorn
    uvicorn.run(
        app,
        host=settings.host,
        port=settings.port,
        log_level=settings.log_level.lower(),
    )


if __name__ == "__main__":
    main()
