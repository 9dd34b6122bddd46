"""HTTP facade over the library.

Every endpoint is stateless and synchronous: requests carry their data
inline, responses return complete artifacts, and nothing touches disk.
Library errors map to a 400 with ``{error, detail, exit_code}`` so thin
clients can exit with the right process code (1 usage, 2 data, 3
numeric).
"""

from __future__ import annotations

import json
import math

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .. import __version__
from ..backtest import annualize_return, run_backtest, sharpe_ratio
from ..errors import (InvalidArgumentError, InitializationError, DataError,
                      SptlabError, UndefinedSharpeError, exit_code_for)
from ..experiment import ExperimentPlan, run_experiment
from ..gp import artifact_from_json, artifact_to_json, blocked_gibbs, map_csv, posterior_targets
from ..inference import GammaLikelihood, grid_search_dwp, mh_sample_dwp
from ..market import MarketParams, MarketPath, coarsen_path, simulate_market
from ..master_equation import decomposition_csv, verify_master
from ..panel_io import PanelBundle, characteristics_csv, ingest_panel
from ..portfolios import parse_generator
from ..reports import chain_histogram_csv, fold_table_csv, histogram_csv, summary_csv
from ..strategies import build_targets, parse_strategy
from ..synthetic import bundle_from_path, planted_premium_bundle
from . import schemas


def _ingest(req: schemas.PanelRequest) -> PanelBundle:
    return ingest_panel(req.returns_csv, req.characteristics_csv, req.membership_csv)


def _maybe(value: float) -> float | None:
    return float(value) if math.isfinite(value) else None


def _json_safe(obj):
    """Replace non-finite floats with None so responses stay strict JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _series_summary(series, config) -> schemas.BacktestSummary:
    try:
        ann = _maybe(100.0 * annualize_return(series, config.periods_per_year))
    except SptlabError:
        ann = None
    try:
        sr = _maybe(sharpe_ratio(series.portfolio_returns, config.periods_per_year))
    except SptlabError:
        sr = None
    return schemas.BacktestSummary(
        terminal_wealth=series.terminal_wealth,
        annualized_return_pct=ann,
        sharpe=sr,
        total_turnover=float(series.turnover.sum()),
        total_cost=float(series.costs.sum()),
        bankrupt=series.bankrupt,
        n_days=int(series.dates.shape[0]))


def _parse_grid_sizes(text: str | None) -> tuple | None:
    if text is None:
        return None
    try:
        return tuple(int(part) for part in text.lower().split("x"))
    except ValueError:
        raise InvalidArgumentError(f"grid sizes must look like '64' or '32x32', got {text!r}")


def create_app() -> FastAPI:
    app = FastAPI(title="sptlab", version=__version__,
                  description="Simulation, backtesting and strategy learning "
                              "for rank- and weight-driven equity portfolios.")

    @app.exception_handler(SptlabError)
    def _library_error(request: Request, exc: SptlabError) -> JSONResponse:
        return JSONResponse(status_code=400, content={
            "error": type(exc).__name__,
            "detail": str(exc),
            "exit_code": exit_code_for(exc),
        })

    @app.exception_handler(Exception)
    def _unexpected_error(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=500, content={
            "error": type(exc).__name__,
            "detail": str(exc),
            "exit_code": exit_code_for(exc),
        })

    @app.get("/health", response_model=schemas.HealthResponse)
    def health() -> schemas.HealthResponse:
        return schemas.HealthResponse(status="ok", package="sptlab", version=__version__)

    @app.post("/simulate", response_model=schemas.SimulateResponse)
    def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
        if not (req.dt > 0):
            raise InvalidArgumentError("dt must be positive")
        ppy = max(1, int(round(1.0 / req.dt)))
        if req.premium is not None:
            bundle = planted_premium_bundle(
                req.n_assets, req.years, req.seed, premium=req.premium,
                drift=req.drift, vol=req.vol, cap_spread=req.cap_spread,
                start_year=req.start_year, periods_per_year=ppy)
            caps = bundle.channels["cap"]
            path = MarketPath(np.arange(caps.shape[0]) / ppy, caps)
        else:
            x0 = (np.asarray(req.x0, dtype=float) if req.x0
                  else req.cap_spread ** np.arange(req.n_assets))
            params = MarketParams.gbm(req.n_assets, drift=req.drift, vol=req.vol, x0=x0)
            path = simulate_market(params, req.years, req.dt, req.seed)
            bundle = (bundle_from_path(path, req.start_year, ppy)
                      if req.emit_panel else None)
        return schemas.SimulateResponse(
            path_csv=path.to_csv(),
            returns_csv=bundle.panel.to_csv() if bundle is not None else None,
            characteristics_csv=characteristics_csv(bundle) if bundle is not None else None,
            n_assets=path.n_assets, n_steps=path.n_steps)

    @app.post("/backtest", response_model=schemas.BacktestResponse)
    def backtest(req: schemas.BacktestRequest) -> schemas.BacktestResponse:
        bundle = _ingest(req)
        config = req.settings.to_config()
        head = req.strategy.partition(":")[0].strip().lower()
        if head == "map" and req.artifact_json is not None:
            targets = posterior_targets(bundle, artifact_from_json(req.artifact_json))
        else:
            spec = parse_strategy(req.strategy)
            if spec.is_learner:
                raise InvalidArgumentError(
                    f"{spec.kind!r} is a learner; fit it via /learn or /experiment")
            targets = build_targets(spec, bundle)
        series = run_backtest(targets, bundle.panel, config)
        return schemas.BacktestResponse(wealth_csv=series.to_csv(),
                                        summary=_series_summary(series, config))

    @app.post("/learn/dwp-grid", response_model=schemas.DwpGridResponse)
    def learn_dwp_grid(req: schemas.DwpGridRequest) -> schemas.DwpGridResponse:
        bundle = _ingest(req)
        res = grid_search_dwp(bundle, lo=req.lo, hi=req.hi, mesh=req.mesh,
                              config=req.settings.to_config())
        lines = ["p,value"]
        lines += [f"{float(p)!r},{float(v)!r}" for p, v in zip(res.grid, res.values)]
        info = res.summary()
        return schemas.DwpGridResponse(
            p_star=res.p_star, best_value=info["best_value"],
            grid_points=info["grid_points"], evaluated=info["evaluated"],
            skipped=[schemas.SkippedPoint(**s) for s in info["skipped"]],
            values_csv="\n".join(lines) + "\n")

    @app.post("/learn/dwp-mh", response_model=schemas.DwpMhResponse)
    def learn_dwp_mh(req: schemas.DwpMhRequest) -> schemas.DwpMhResponse:
        bundle = _ingest(req)
        config = req.settings.to_config()
        lik = GammaLikelihood(req.a, req.b)
        kwargs = dict(iterations=req.iterations, burn_in=req.burn_in,
                      proposal_std=req.proposal_std, lo=req.lo, hi=req.hi,
                      seed=req.seed, config=config)
        try:
            chain = mh_sample_dwp(bundle, lik=lik, initial_p=req.initial_p, **kwargs)
        except InitializationError:
            if not req.auto_start:
                raise
            coarse = grid_search_dwp(bundle, lo=req.lo, hi=req.hi, mesh=0.5,
                                     config=config)
            chain = mh_sample_dwp(bundle, lik=lik, initial_p=coarse.p_star, **kwargs)
        return schemas.DwpMhResponse(chain_csv=chain.to_csv(),
                                     summary=_json_safe(chain.summary()))

    @app.post("/learn/gp", response_model=schemas.GpLearnResponse)
    def learn_gp(req: schemas.GpLearnRequest) -> schemas.GpLearnResponse:
        bundle = _ingest(req)
        char_specs = [part.strip() for part in req.chars.split("+") if part.strip()]
        if not char_specs:
            raise InvalidArgumentError("chars must name at least one channel")
        posterior = blocked_gibbs(
            bundle, char_specs, lik=GammaLikelihood(req.a, req.b),
            iterations=req.iterations, burn_in=req.burn_in, seed=req.seed,
            config=req.settings.to_config(),
            grid_sizes=_parse_grid_sizes(req.grid_sizes))
        trace = posterior.diagnostics.get("loglik_trace")
        summary = {"hyper_summary": posterior.hyper_summary(),
                   "n_retained": posterior.n_retained,
                   "char_specs": list(posterior.char_specs),
                   "grid_shape": list(posterior.grid.shape)}
        if trace is not None:
            summary["mean_retained_log_lik"] = float(np.mean(trace[req.burn_in:]))
        return schemas.GpLearnResponse(artifact_json=artifact_to_json(posterior),
                                       map_csv=map_csv(posterior),
                                       summary=_json_safe(summary))

    @app.post("/verify-master", response_model=schemas.VerifyMasterResponse)
    def verify(req: schemas.VerifyMasterRequest) -> schemas.VerifyMasterResponse:
        path = MarketPath.from_csv(req.path_csv)
        generator = parse_generator(req.generator)
        if req.sigma is not None:
            sigma = np.asarray(req.sigma, dtype=float)
        elif req.vol is not None:
            sigma = req.vol * np.eye(path.n_assets)
        elif req.covariance == "realized":
            sigma = None
        else:
            raise InvalidArgumentError("provide either vol or an explicit sigma matrix")
        rows = []
        for factor in (req.coarsen or [1]):
            sub = coarsen_path(path, int(factor))
            dt = float(sub.times[1] - sub.times[0])
            rows.append((dt, verify_master(generator, sub, sigma,
                                           covariance=req.covariance)))
        return schemas.VerifyMasterResponse(
            rows=[schemas.DecompositionRow(
                dt=dt, lhs=dec.lhs, g_term=dec.g_term,
                drift_integral=dec.drift_integral,
                covariate_integral=dec.covariate_integral,
                residual=dec.residual) for dt, dec in rows],
            csv=decomposition_csv(rows),
            max_abs_residual=max(abs(dec.residual) for _, dec in rows))

    @app.post("/experiment", response_model=schemas.ExperimentResponse)
    def experiment(req: schemas.ExperimentRequest) -> schemas.ExperimentResponse:
        bundle = _ingest(req)
        plan = ExperimentPlan(train_years=req.train_years, test_years=req.test_years,
                              roll_step_years=req.roll_step_years,
                              start_year=req.start_year)
        result = run_experiment(plan, req.strategies, bundle,
                                config=req.settings.to_config(), seed=req.seed)
        payload = result.to_json_dict()
        return schemas.ExperimentResponse(
            experiment_json=json.dumps(payload, indent=2),
            summary_csv=summary_csv(payload),
            n_folds=len(result.folds))

    @app.post("/report", response_model=schemas.ReportResponse)
    def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
        bounds = (req.lo, req.hi) if req.lo is not None and req.hi is not None else None
        if req.kind in ("summary", "folds"):
            if req.experiment_json is None:
                raise InvalidArgumentError(f"report kind {req.kind!r} needs experiment_json")
            try:
                payload = json.loads(req.experiment_json)
            except json.JSONDecodeError as err:
                raise DataError(f"experiment artifact is not valid JSON: {err}") from None
            text = summary_csv(payload) if req.kind == "summary" else fold_table_csv(payload)
        elif req.kind == "histogram":
            if req.chain_csv is not None:
                text = chain_histogram_csv(req.chain_csv, req.bins, bounds)
            elif req.samples:
                text = histogram_csv(np.asarray(req.samples, dtype=float), req.bins, bounds)
            else:
                raise InvalidArgumentError("histogram report needs chain_csv or samples")
        else:
            if req.artifact_json is None:
                raise InvalidArgumentError("map-band report needs artifact_json")
            text = map_csv(artifact_from_json(req.artifact_json))
        return schemas.ReportResponse(csv=text)

    return app


app = create_app()
