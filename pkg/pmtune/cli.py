"""
Experiment Runner
Reproducible subcommands for tuning, toy, GLMM, Lotka-Volterra and
asymptotic-check experiments, with CSV and JSON outputs
"""

import argparse
import logging
import math
import sys
from dataclasses import asdict
from functools import partial
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy import optimize

from config.experiments import (
    BvmConfig,
    CltConfig,
    GlmmConfig,
    GlobalOptions,
    LvConfig,
    PRESET_NAMES,
    ToyConfig,
    TuneConfig,
    load_experiment_config,
)
from config.settings import get_settings

from . import __version__
from .clt_checks import bvm_report, noise_clt_report, noise_clt_spot_check
from .core import CovarianceMatrix, RngStream
from .diagnostics import TraceSummary, summarize
from .estimators import ImportanceSamplingTarget, IsProposal, estimate_sigma
from .kernel import (
    LimitingKernelSpec,
    RandomWalkProposal,
    Trace,
    initialize_chain,
    pm_step,
    run_chain,
    simulate_limiting_chain,
)
from .models import ExpFamilySpec, GlmmModel, ToyModel, make_design, toy_simulate
from .pf import InitialDistribution, LvParams, LvState, Resampling, lv_experiment, lv_simulate_data
from .tuning import GridSpec, grid_search, tuned_proposal
from .utils import (
    ConfigError,
    DegenerateTrace,
    NotPositiveDefinite,
    PmtuneError,
    RunRecord,
    Stopwatch,
    write_csv,
    write_json,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def _int_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------------

def _all_coordinates(theta: np.ndarray, z: float) -> np.ndarray:
    return np.array(theta, dtype=float)


def _finite_sigma(sigma: float) -> Optional[float]:
    return sigma if math.isfinite(sigma) and sigma > 0 else None


def _safe_summary(trace: Trace, sigma: Optional[float], label: str) -> Dict[str, float]:
    """iat/acc/ct of a trace, NaN when the trace is degenerate"""
    try:
        summary: TraceSummary = summarize(trace, sigma)
        return {
            "iat": summary.iat,
            "acc": summary.acceptance_rate,
            "ct": summary.ct if summary.ct is not None else math.nan,
        }
    except DegenerateTrace as exc:
        logger.warning(f"{label}: degenerate trace ({exc})")
        return {"iat": math.nan, "acc": trace.acceptance_rate, "ct": math.nan}


def _limiting_summary(
    ell: float,
    sigma: float,
    Sigma: Optional[CovarianceMatrix],
    dim: int,
    M: int,
    rng: RngStream,
    burn_in: Optional[int],
    label: str,
) -> Dict[str, float]:
    """Limiting chain matched to a measured noise level"""
    if not math.isfinite(sigma):
        logger.warning(f"{label}: no limiting chain for sigma={sigma}")
        return {"iat": math.nan, "acc": math.nan, "ct": math.nan}
    spec = LimitingKernelSpec(ell, sigma, Sigma, dim)
    trace = simulate_limiting_chain(spec, M, rng, burn_in, all_coordinates=dim > 1)
    return _safe_summary(trace, _finite_sigma(sigma), label)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_tune(config: TuneConfig, out: Path) -> Dict[str, Any]:
    """Grid search of CT(ell, sigma); writes grid.csv, cells.csv, summary.json"""
    ell_grid, sigma_grid = config.grids()
    spec = GridSpec(
        d=config.d,
        ell_grid=tuple(ell_grid),
        sigma_grid=tuple(sigma_grid),
        M=config.M,
        replicates=config.replicates,
        seed=config.seed,
        workers=config.workers,
        burn_in_fraction=config.burn_in_fraction,
    )
    result = grid_search(spec)
    write_csv(result.to_frame(), out / "grid.csv")
    write_csv(result.cell_table(), out / "cells.csv")

    summary = result.summary()
    if config.single_cell:
        summary["ct"] = summary["ct_opt"]
    write_json(summary, out / "summary.json")
    logger.info(
        f"d={config.d}: ell_opt={summary['ell_opt']:.2f}, sigma_opt={summary['sigma_opt']:.2f}, "
        f"CT={summary['ct_opt']:.2f}"
    )
    return summary


def cmd_toy(config: ToyConfig, out: Path) -> Dict[str, Any]:
    """
    Pseudo-marginal chain against the limiting chain at matched noise

    Data from stream (seed, 0); for the i-th N the noise level uses
    (seed, 1, i), the pseudo-marginal chain (seed, 2, i) and the limiting
    chain (seed, 3, i). The random walk has variance ell^2 * 2 / T.
    """
    model = ToyModel(config.sigma0_sq)
    y = toy_simulate(config.theta_bar, config.T, RngStream(config.seed, 0))
    write_csv(pd.DataFrame({"t": np.arange(config.T), "y": y}), out / "data.csv")
    post_mean, post_var = model.posterior(y)
    proposal = RandomWalkProposal(config.ell, CovarianceMatrix([[2.0 / config.T]]))

    rows = []
    for i, N in enumerate(config.N_list):
        sigma_hat = estimate_sigma(
            model, post_mean, y, N, config.sigma_reps, RngStream(config.seed, (1, i))
        )

        target = ImportanceSamplingTarget(model, y, N)
        rng = RngStream(config.seed, (2, i))
        state = initialize_chain(target, [post_mean], rng)
        trace = run_chain(
            state,
            partial(pm_step, model=target, proposal=proposal, rng=rng),
            config.M,
            burn_in=config.burn_in,
        )
        pm = _safe_summary(trace, _finite_sigma(sigma_hat), f"toy N={N}")
        limit = _limiting_summary(
            config.ell, sigma_hat, None, 1, config.M,
            RngStream(config.seed, (3, i)), config.burn_in, f"toy limit N={N}",
        )

        rows.append({
            "T": config.T,
            "N": N,
            "sigma_hat": sigma_hat,
            "pm_iat": pm["iat"],
            "pm_acc": pm["acc"],
            "pm_ct": pm["ct"],
            "limit_iat": limit["iat"],
            "limit_acc": limit["acc"],
            "limit_ct": limit["ct"],
        })
        logger.info(
            f"T={config.T}, N={N}: sigma_hat={sigma_hat:.3f}, acc pm={pm['acc']:.4f} "
            f"limit={limit['acc']:.4f}"
        )

    frame = pd.DataFrame(rows)
    write_csv(frame, out / "toy.csv")
    summary = {"posterior_mean": post_mean, "posterior_var": post_var, "rows": rows}
    write_json(summary, out / "summary.json")
    return summary


def _glmm_model(config: GlmmConfig, design: np.ndarray) -> GlmmModel:
    expfam = ExpFamilySpec.from_name(config.family, config.n_trials)
    if config.proposal == "t_at_mode":
        proposal = IsProposal.student_t(config.nu)
    else:
        proposal = IsProposal.gaussian()
    return GlmmModel(
        expfam,
        covariates=design,
        beta=config.beta,
        tau=config.tau,
        proposal=proposal,
        beta_prior_sd=config.beta_prior_sd,
        tau2_prior_shape=config.tau2_prior_shape,
        tau2_prior_scale=config.tau2_prior_scale,
    )


def _glmm_map(model: GlmmModel, data, p: int):
    """
    Posterior mode by BFGS on (beta, log tau) with the quadrature likelihood

    Returns:
        (theta_map, covariance on the (beta, tau) scale)
    """

    def objective(phi):
        theta = np.append(phi[:-1], math.exp(phi[-1]))
        value = model.log_prior(theta) + model.exact_loglik(theta, data)
        return -value if math.isfinite(value) else 1e300

    start = np.zeros(p + 1)
    result = optimize.minimize(objective, start, method="BFGS")
    if not result.success:
        logger.warning(f"MAP search did not converge: {result.message}")
    tau = math.exp(result.x[-1])
    theta_map = np.append(result.x[:-1], tau)

    jac = np.ones(p + 1)
    jac[-1] = tau
    hess_inv = np.asarray(result.hess_inv)
    cov = jac[:, None] * 0.5 * (hess_inv + hess_inv.T) * jac[None, :]
    try:
        base = CovarianceMatrix(cov)
        _ = base.chol
    except NotPositiveDefinite:
        logger.warning("Inverse Hessian unusable; starting from a diagonal covariance")
        base = CovarianceMatrix.diagonal(np.full(p + 1, 0.01))
    return theta_map, base


def cmd_glmm(config: GlmmConfig, out: Path) -> Dict[str, Any]:
    """
    Pseudo-marginal chains on a simulated GLMM across sample sizes N

    Streams: design (seed, 0), data (seed, 1), pilot (seed, 2), then per N
    noise (seed, 3, i), chain (seed, 4, i) and limiting chain (seed, 5, i).
    IATs are summed over the d = p + 1 coordinates.
    """
    design = make_design(config.T, config.J, config.p, RngStream(config.seed, 0))
    model = _glmm_model(config, design)
    data = model.simulate(config.T, RngStream(config.seed, 1))
    data.to_csv(out / "data.csv")
    d = config.p + 1

    theta_map, base = _glmm_map(model, data, config.p)
    theta_hat = theta_map
    if config.pilot_M > 0:
        pilot = ImportanceSamplingTarget(model, data, config.pilot_N)
        rng = RngStream(config.seed, 2)
        state = initialize_chain(pilot, theta_map, rng)
        trace = run_chain(
            state,
            partial(pm_step, model=pilot, proposal=RandomWalkProposal(config.ell, base), rng=rng),
            config.pilot_M,
            f=_all_coordinates,
        )
        logger.info(f"Pilot acceptance {trace.acceptance_rate:.3f} over {config.pilot_M} steps")
        try:
            proposal = tuned_proposal(trace.f_values, config.ell)
            _ = proposal.effective_cov.chol
            base = proposal.base_cov
            theta_hat = trace.f_values.mean(axis=0)
        except NotPositiveDefinite as exc:
            logger.warning(f"Pilot covariance unusable ({exc}); keeping the MAP curvature")

    proposal = RandomWalkProposal(config.ell, base)
    rows = []
    for i, N in enumerate(config.N_list):
        sigma_hat = estimate_sigma(
            model, theta_hat, data, N, config.sigma_reps, RngStream(config.seed, (3, i))
        )
        target = ImportanceSamplingTarget(model, data, N)
        rng = RngStream(config.seed, (4, i))
        state = initialize_chain(target, theta_hat, rng)
        trace = run_chain(
            state,
            partial(pm_step, model=target, proposal=proposal, rng=rng),
            config.M,
            f=_all_coordinates,
            burn_in=config.burn_in,
        )
        pm = _safe_summary(trace, _finite_sigma(sigma_hat), f"glmm N={N}")
        limit = _limiting_summary(
            config.ell, sigma_hat, base, d, config.M,
            RngStream(config.seed, (5, i)), config.burn_in, f"glmm limit N={N}",
        )
        rows.append({
            "N": N,
            "sigma_hat": sigma_hat,
            "pm_iat_sum": pm["iat"],
            "pm_acc": pm["acc"],
            "pm_ct": pm["ct"],
            "limit_iat_sum": limit["iat"],
            "limit_acc": limit["acc"],
            "limit_ct": limit["ct"],
        })
        logger.info(
            f"GLMM N={N}: sigma_hat={sigma_hat:.3f}, acc pm={pm['acc']:.4f} "
            f"limit={limit['acc']:.4f}"
        )

    frame = pd.DataFrame(rows)
    write_csv(frame, out / "glmm.csv")
    summary: Dict[str, Any] = {
        "d": d,
        "theta_map": theta_map,
        "theta_hat": theta_hat,
        "rows": rows,
    }
    finite = frame[np.isfinite(frame["pm_ct"])]
    if not finite.empty:
        best = finite.loc[finite["pm_ct"].idxmin()]
        summary["best"] = {"N": int(best["N"]), "sigma_hat": float(best["sigma_hat"])}
    write_json(summary, out / "summary.json")
    return summary


def cmd_lv(config: LvConfig, out: Path) -> Dict[str, Any]:
    """Lotka-Volterra PMMH across particle counts; data from stream (seed, 3)"""
    params = LvParams(*config.beta, obs_sd=config.obs_sd)
    start = LvState(config.x0[0], config.x0[1], 0.0)
    data = lv_simulate_data(params, start, config.T, RngStream(config.seed, 3))
    data.to_csv(out / "data.csv")

    rows = lv_experiment(
        data,
        config.N_list,
        config.M,
        config.seed,
        InitialDistribution.point(*config.x0),
        theta0=config.beta,
        ell=config.ell,
        pilot_M=config.pilot_M,
        sigma_reps=config.sigma_reps,
        obs_sd=config.obs_sd,
        resampling=Resampling(config.resampling),
        burn_in=config.burn_in,
    )
    frame = pd.DataFrame([asdict(r) for r in rows])
    write_csv(frame, out / "lv.csv")
    summary: Dict[str, Any] = {"rows": [asdict(r) for r in rows]}
    if rows:
        ct = frame[["ct_beta1", "ct_beta2", "ct_beta3"]].mean(axis=1)
        if ct.notna().any():
            best = frame.loc[ct.idxmin()]
            summary["best"] = {"N": int(best["N"]), "sigma_hat": float(best["sigma_hat"])}
    write_json(summary, out / "summary.json")
    return summary


def cmd_clt(config: CltConfig, out: Path) -> Dict[str, Any]:
    """Noise CLT proxies; the glmm model uses the GLMM_ defaults with a shared design"""
    if config.model == "toy":
        model = ToyModel()
        report = noise_clt_report(
            model, [config.theta_bar], config.T_list, config.gamma, config.reps, config.seed
        )
    else:
        glmm = load_experiment_config("glmm", overrides={"seed": config.seed})
        design = make_design(1, glmm.J, glmm.p, RngStream(config.seed, 0))[0]
        model = _glmm_model(glmm, design)
        report = noise_clt_report(
            model,
            model.params.to_vector(),
            config.T_list,
            config.gamma,
            config.reps,
            config.seed,
            simulate=lambda T, rng: model.simulate(T, rng),
        )
    write_csv(report.to_frame(), out / "clt.csv")
    summary = report.as_dict()

    if config.spot_check:
        spot = noise_clt_spot_check(
            model, config.theta_bar, max(config.T_list), config.gamma, config.reps,
            config.seed, config.delta,
        )
        write_csv(spot, out / "clt_spot_check.csv")
    write_json(summary, out / "summary.json")
    return summary


def cmd_bvm(config: BvmConfig, out: Path) -> Dict[str, Any]:
    rows = bvm_report(config.sigma0_sq, config.theta_bar, config.T_list, config.seed)
    frame = pd.DataFrame([asdict(r) for r in rows])
    write_csv(frame, out / "bvm.csv")
    summary = {"rows": [asdict(r) for r in rows]}
    write_json(summary, out / "summary.json")
    return summary


COMMANDS: Dict[str, Callable[[GlobalOptions, Path], Dict[str, Any]]] = {
    "tune": cmd_tune,
    "toy": cmd_toy,
    "glmm": cmd_glmm,
    "lv": cmd_lv,
    "clt": cmd_clt,
    "bvm": cmd_bvm,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

# flag dest -> config key
RENAMES = {"N": "N_list", "sigma0": "sigma0_sq"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None, help="JSON config file")
    common.add_argument("--preset", choices=PRESET_NAMES, default="desk")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--workers", type=int, default=None)
    common.add_argument("--output-dir", dest="output_dir", default=None)
    common.add_argument("--log-level", dest="log_level", default=None)

    parser = argparse.ArgumentParser(
        prog="pmtune",
        description="Pseudo-marginal MCMC engine and optimal-tuning lab",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    tune = sub.add_parser("tune", parents=[common], help="CT grid search on the limiting kernel")
    tune.add_argument("--d", type=int, default=None, help="Parameter dimension")
    tune.add_argument("--M", type=int, default=None)
    tune.add_argument("--replicates", type=int, default=None)
    tune.add_argument("--ell-grid", dest="ell_grid", type=_float_list, default=None)
    tune.add_argument("--sigma-grid", dest="sigma_grid", type=_float_list, default=None)
    tune.add_argument("--single-cell", dest="single_cell", action="store_true", default=None)
    tune.add_argument("--ell", type=float, default=None)
    tune.add_argument("--sigma", type=float, default=None)

    toy = sub.add_parser("toy", parents=[common], help="Normal toy model experiment")
    toy.add_argument("--T", type=int, default=None)
    toy.add_argument("--N", type=_int_list, default=None, help="Comma-separated sample sizes")
    toy.add_argument("--M", type=int, default=None)
    toy.add_argument("--ell", type=float, default=None)
    toy.add_argument("--theta-bar", dest="theta_bar", type=float, default=None)
    toy.add_argument("--sigma0-sq", dest="sigma0_sq", type=float, default=None)
    toy.add_argument("--sigma-reps", dest="sigma_reps", type=int, default=None)

    glmm = sub.add_parser("glmm", parents=[common], help="Simulated GLMM experiment")
    glmm.add_argument("--family", choices=["logistic", "binomial", "poisson"], default=None)
    glmm.add_argument("--T", type=int, default=None, help="Number of clusters")
    glmm.add_argument("--J", type=int, default=None, help="Observations per cluster")
    glmm.add_argument("--N", type=_int_list, default=None)
    glmm.add_argument("--M", type=int, default=None)
    glmm.add_argument("--ell", type=float, default=None)
    glmm.add_argument("--proposal", choices=["gaussian_at_mode", "t_at_mode"], default=None)
    glmm.add_argument("--nu", type=float, default=None)
    glmm.add_argument("--pilot-M", dest="pilot_M", type=int, default=None)

    lv = sub.add_parser("lv", parents=[common], help="Lotka-Volterra particle filter experiment")
    lv.add_argument("--T", type=int, default=None, help="Last observation time")
    lv.add_argument("--N", type=_int_list, default=None)
    lv.add_argument("--M", type=int, default=None)
    lv.add_argument("--ell", type=float, default=None)
    lv.add_argument("--resampling", choices=["multinomial", "systematic"], default=None)
    lv.add_argument("--pilot-M", dest="pilot_M", type=int, default=None)

    clt = sub.add_parser("clt", parents=[common], help="Noise CLT proxies")
    clt.add_argument("--model", choices=["toy", "glmm"], default=None)
    clt.add_argument("--T", dest="T_list", type=_int_list, default=None)
    clt.add_argument("--gamma", type=float, default=None)
    clt.add_argument("--reps", type=int, default=None)
    clt.add_argument("--theta-bar", dest="theta_bar", type=float, default=None)
    clt.add_argument("--spot-check", dest="spot_check", action="store_true", default=None)

    bvm = sub.add_parser("bvm", parents=[common], help="Posterior concentration of the toy model")
    bvm.add_argument("--sigma0", type=float, default=None, help="Prior variance sigma0^2")
    bvm.add_argument("--T", dest="T_list", type=_int_list, default=None)
    bvm.add_argument("--theta-bar", dest="theta_bar", type=float, default=None)

    serve = sub.add_parser("serve", help="Start the HTTP service")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--reload", action="store_true", default=None)
    serve.add_argument("--log-level", dest="log_level", default=None)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    skip = {"command", "config", "preset", "log_level"}
    return {
        RENAMES.get(key, key): value
        for key, value in vars(args).items()
        if key not in skip and value is not None
    }


def configure_logging(level: Optional[str] = None) -> None:
    settings = get_settings()
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if settings.log_file:
        handlers.append(logging.FileHandler(settings.log_file))
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format=settings.log_format,
        handlers=handlers,
    )


def serve(args: argparse.Namespace) -> int:
    import uvicorn

    settings = get_settings()
    uvicorn.run(
        "api.main:app",
        host=args.host or settings.host,
        port=args.port or settings.port,
        reload=bool(args.reload) if args.reload is not None else settings.reload,
        log_level=(args.log_level or settings.log_level).lower(),
    )
    return EXIT_OK


def run(kind: str, config: GlobalOptions) -> Dict[str, Any]:
    """Execute one experiment and write metadata.json next to its outputs"""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    timer = Stopwatch()
    summary = COMMANDS[kind](config, out)
    record = RunRecord(
        command=kind,
        config=config.model_dump(),
        seed=config.seed,
        version=__version__,
        wall_time_s=timer.elapsed,
    )
    write_json(record.as_dict(), out / "metadata.json")
    logger.info(f"{kind} finished in {timer.elapsed:.1f}s; outputs in {out}")
    return summary


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    if args.command == "serve":
        return serve(args)

    try:
        config = load_experiment_config(args.command, args.preset, args.config, _overrides(args))
    except (ConfigError, ValidationError) as exc:
        parser.print_usage(sys.stderr)
        logger.error(f"Invalid {args.command} configuration: {exc}")
        return EXIT_CONFIG

    try:
        run(args.command, config)
    except ConfigError as exc:
        logger.error(f"Invalid {args.command} configuration: {exc}")
        return EXIT_CONFIG
    except PmtuneError as exc:
        logger.error(f"{args.command} failed: {type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
