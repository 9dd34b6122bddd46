"""Rolling walk-forward experiments.

A plan slices the panel into year-aligned train/test folds (defaults: 10
years of training, 5 of testing, rolled by 1 year, so 23 years give 9
folds). Learners are fit on each training window, the learned object is
frozen, and both windows are backtested. Aggregates report the mean plus
or minus two standard errors across folds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .backtest import (
    BacktestConfig,
    WealthSeries,
    annualize_return,
    run_backtest,
    sharpe_ratio,
)
from .errors import (
    DataError,
    InitializationError,
    SptlabError,
    UndefinedSharpeError,
)
from .panel_io import PanelBundle
from .strategies import StrategySpec, build_targets, dwp_targets, parse_strategy

logger = logging.getLogger(__name__)

_MIN_WINDOW_ROWS = 2


@dataclass(frozen=True)
class ExperimentPlan:
    train_years: int = 10
    test_years: int = 5
    roll_step_years: int = 1
    start_year: int | None = None

    def __post_init__(self):
        if min(self.train_years, self.test_years, self.roll_step_years) < 1:
            raise DataError("plan years must all be >= 1")


def _row_years(dates: np.ndarray) -> np.ndarray:
    try:
        return np.array([int(str(d)[:4]) for d in dates])
    except ValueError:
        raise DataError(
            "dates must begin with a 4-digit year to build a rolling plan") from None


@dataclass(frozen=True)
class Fold:
    index: int
    train_lo: int
    train_hi: int
    test_lo: int
    test_hi: int
    train_years: tuple
    test_years: tuple


def build_folds(plan: ExperimentPlan, dates: np.ndarray) -> list:
    """Year-aligned fold boundaries as row ranges into the panel."""
    years = _row_years(dates)
    first = plan.start_year if plan.start_year is not None else int(years[0])
    last = int(years[-1])
    folds = []
    f = 0
    while True:
        tr0 = first + f * plan.roll_step_years
        tr1 = tr0 + plan.train_years          # first test year
        te1 = tr1 + plan.test_years           # one past the last test year
        if te1 - 1 > last:
            break
        train_ix = np.flatnonzero((years >= tr0) & (years < tr1))
        test_ix = np.flatnonzero((years >= tr1) & (years < te1))
        if train_ix.size >= _MIN_WINDOW_ROWS and test_ix.size >= _MIN_WINDOW_ROWS:
            fold = Fold(f, int(train_ix[0]), int(train_ix[-1]) + 1,
                        int(test_ix[0]), int(test_ix[-1]) + 1,
                        (tr0, tr1 - 1), (tr1, te1 - 1))
            assert str(dates[fold.train_hi - 1]) < str(dates[fold.test_lo])
            folds.append(fold)
        else:
            logger.warning("fold %d skipped: train/test windows too thin", f)
        f += 1
    return folds


@dataclass
class StrategyFoldResult:
    label: str
    is_series: WealthSeries
    oos_series: WealthSeries
    is_ret: float        # annualized, percent
    oos_ret: float
    oos_sr: float        # NaN when undefined
    learned: dict = field(default_factory=dict)


@dataclass
class FoldReport:
    fold: Fold
    results: dict = field(default_factory=dict)   # label -> StrategyFoldResult
    warnings: tuple = ()


def _fit_and_target(spec: StrategySpec, train: PanelBundle, test: PanelBundle,
                    config: BacktestConfig, seed: int) -> tuple[np.ndarray, np.ndarray, dict]:
    """Returns (train targets, test targets, learned summary)."""
    if not spec.is_learner:
        return build_targets(spec, train), build_targets(spec, test), {}

    p = spec.params
    if spec.kind == "dwp-grid":
        from .inference import grid_search_dwp
        res = grid_search_dwp(train, lo=float(p.get("lo", -8.0)),
                              hi=float(p.get("hi", 8.0)),
                              mesh=float(p.get("mesh", 0.05)), config=config)
        return (dwp_targets(train, res.p_star), dwp_targets(test, res.p_star),
                {"p_star": res.p_star})

    if spec.kind == "dwp-mh":
        from .inference import GammaLikelihood, grid_search_dwp, mh_sample_dwp
        lik = GammaLikelihood(float(p.get("a", 7.0)), float(p.get("b", 0.5)))
        kwargs = dict(iterations=int(p.get("iterations", 10_000)),
                      burn_in=int(p.get("burn_in", 5_000)),
                      proposal_std=float(p.get("proposal_std", 0.5)),
                      lo=float(p.get("lo", -8.0)), hi=float(p.get("hi", 8.0)),
                      seed=int(p.get("seed", seed)), config=config)
        initial = float(p.get("initial_p", 0.0))
        try:
            chain = mh_sample_dwp(train, lik=lik, initial_p=initial, **kwargs)
        except InitializationError:
            # the chain cannot start where performance is non-positive; a
            # coarse scan finds a feasible exponent to launch from
            coarse = grid_search_dwp(train, mesh=0.5, lo=kwargs["lo"],
                                     hi=kwargs["hi"], config=config)
            chain = mh_sample_dwp(train, lik=lik, initial_p=coarse.p_star, **kwargs)
        p_hat = chain.posterior_mean
        learned = {"posterior_mean": p_hat, "posterior_std": chain.posterior_std,
                   "acceptance_rate": chain.acceptance_rate}
        return dwp_targets(train, p_hat), dwp_targets(test, p_hat), learned

    if spec.kind == "gp":
        from .gp import blocked_gibbs, posterior_targets
        from .inference import GammaLikelihood
        chars = p.get("chars", "log:mu")
        char_specs = chars.split("+") if isinstance(chars, str) else list(chars)
        lik = GammaLikelihood(float(p.get("a", 7.0)), float(p.get("b", 0.5)))
        sizes = p.get("grid_sizes")
        if isinstance(sizes, str):
            sizes = tuple(int(s) for s in sizes.split("x"))
        elif isinstance(sizes, float):
            sizes = (int(sizes),) * len(char_specs)
        posterior = blocked_gibbs(
            train, char_specs, lik=lik,
            iterations=int(p.get("iterations", 2_000)),
            burn_in=int(p.get("burn_in", 1_000)),
            seed=int(p.get("seed", seed)), config=config, grid_sizes=sizes)
        learned = {"hyper_summary": posterior.hyper_summary(),
                   "n_retained": posterior.n_retained}
        return (posterior_targets(train, posterior),
                posterior_targets(test, posterior), learned)

    raise DataError(f"unknown learner {spec.kind!r}")


@dataclass
class ExperimentResult:
    plan: ExperimentPlan
    folds: list
    aggregate: dict

    def to_json_dict(self) -> dict:
        return {
            "plan": {"train_years": self.plan.train_years,
                     "test_years": self.plan.test_years,
                     "roll_step_years": self.plan.roll_step_years},
            "n_folds": len(self.folds),
            "folds": [{
                "fold": fr.fold.index,
                "train_years": list(fr.fold.train_years),
                "test_years": list(fr.fold.test_years),
                "warnings": list(fr.warnings),
                "strategies": {
                    label: {"is_ret": r.is_ret, "oos_ret": r.oos_ret,
                            "oos_sr": r.oos_sr,
                            "is_terminal": r.is_series.terminal_wealth,
                            "oos_terminal": r.oos_series.terminal_wealth,
                            "is_turnover": float(r.is_series.turnover.sum()),
                            "oos_turnover": float(r.oos_series.turnover.sum()),
                            "learned": r.learned}
                    for label, r in fr.results.items()},
            } for fr in self.folds],
            "aggregate": self.aggregate,
        }


def _mean_2se(values: np.ndarray) -> tuple[float, float]:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return math.nan, math.nan
    if values.size == 1:
        return float(values[0]), 0.0
    return float(values.mean()), float(2.0 * values.std(ddof=1) / math.sqrt(values.size))


def run_experiment(plan: ExperimentPlan, strategies: list, bundle: PanelBundle,
                   config: BacktestConfig = BacktestConfig(),
                   seed: int = 0) -> ExperimentResult:
    """Fit and evaluate every strategy on every fold.

    ``strategies`` holds StrategySpec objects or spec strings. Learner
    seeds derive from ``seed`` plus the fold index, so reruns are
    reproducible. Strategies that fail on a fold are recorded as warnings;
    if nothing succeeds on any fold the experiment errors out.
    """
    specs = [s if isinstance(s, StrategySpec) else parse_strategy(s) for s in strategies]
    folds = build_folds(plan, bundle.panel.dates)
    if not folds:
        raise DataError("the plan yields no usable folds on this panel")
    reports = []
    for fold in folds:
        train = bundle.window(fold.train_lo, fold.train_hi)
        test = bundle.window(fold.test_lo, fold.test_hi)
        results: dict = {}
        warnings: list = []
        for spec in specs:
            try:
                tr_targets, te_targets, learned = _fit_and_target(
                    spec, train, test, config, seed + 1000 * fold.index)
                is_series = run_backtest(tr_targets, train.panel, config)
                oos_series = run_backtest(te_targets, test.panel, config)
                try:
                    oos_sr = sharpe_ratio(oos_series.portfolio_returns,
                                          config.periods_per_year)
                except UndefinedSharpeError:
                    oos_sr = math.nan
                results[spec.label] = StrategyFoldResult(
                    spec.label, is_series, oos_series,
                    100.0 * annualize_return(is_series, config.periods_per_year),
                    100.0 * annualize_return(oos_series, config.periods_per_year),
                    oos_sr, learned)
            except SptlabError as err:
                msg = f"strategy {spec.label!r} failed on fold {fold.index}: {err}"
                logger.warning(msg)
                warnings.append(msg)
        reports.append(FoldReport(fold, results, tuple(warnings)))

    if not any(fr.results for fr in reports):
        raise DataError("every strategy failed on every fold")

    aggregate: dict = {}
    for spec in specs:
        rows = [fr.results[spec.label] for fr in reports if spec.label in fr.results]
        if not rows:
            continue
        is_m, is_se = _mean_2se(np.array([r.is_ret for r in rows]))
        oos_m, oos_se = _mean_2se(np.array([r.oos_ret for r in rows]))
        sr_m, sr_se = _mean_2se(np.array([r.oos_sr for r in rows]))
        aggregate[spec.label] = {
            "folds": len(rows),
            "is_ret_mean": is_m, "is_ret_2se": is_se,
            "oos_ret_mean": oos_m, "oos_ret_2se": oos_se,
            "oos_sr_mean": sr_m, "oos_sr_2se": sr_se,
        }
    return ExperimentResult(plan, reports, aggregate)
