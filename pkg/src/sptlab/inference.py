"""Learners for the diversity-weighted portfolio exponent.

Two routes to the same object: brute-force grid search maximizing a
performance functional, and a random-walk Metropolis-Hastings sampler
whose target is a Gamma density evaluated at that performance (truncated
to exponents in [-8, 8]). Both price every candidate exponent with a full
transaction-cost backtest.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .backtest import BacktestConfig, WealthSeries, run_backtest, sharpe_ratio
from .errors import (
    InitializationError,
    InvalidArgumentError,
    NoFeasiblePointError,
    SptlabError,
)
from .panel_io import PanelBundle
from .strategies import dwp_targets, ewp_targets

logger = logging.getLogger(__name__)

PerfFunctional = Callable[[WealthSeries], float]

_MEMO_QUANTUM = 1e-9


@dataclass(frozen=True)
class GammaLikelihood:
    """Gamma density parameterized by its mean and standard deviation."""

    a: float = 7.0
    b: float = 0.5

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise InvalidArgumentError("Gamma mean and std must be positive")

    @property
    def shape(self) -> float:
        return (self.a / self.b) ** 2

    @property
    def scale(self) -> float:
        return self.b ** 2 / self.a


def gamma_log_density(x: float, lik: GammaLikelihood) -> float:
    """Log Gamma(shape, scale) density at x; -inf for x <= 0."""
    if not (x > 0):
        return -math.inf
    k, theta = lik.shape, lik.scale
    return (k - 1.0) * math.log(x) - x / theta - math.lgamma(k) - k * math.log(theta)


def make_excess_return_perf(bundle: PanelBundle,
                            config: BacktestConfig = BacktestConfig()) -> PerfFunctional:
    """Terminal wealth in excess of the equal-weight benchmark's."""
    v_bench = run_backtest(ewp_targets(bundle), bundle.panel, config).terminal_wealth
    return lambda series: series.terminal_wealth - v_bench


def make_sharpe_perf(config: BacktestConfig = BacktestConfig()) -> PerfFunctional:
    return lambda series: sharpe_ratio(series.portfolio_returns,
                                       config.periods_per_year)


def _dwp_perf_evaluator(bundle: PanelBundle, perf: PerfFunctional | None,
                        config: BacktestConfig) -> Callable[[float], float]:
    """Memoized p -> performance map (the backtests dominate sampler cost)."""
    if perf is None:
        perf = make_excess_return_perf(bundle, config)
    memo: dict = {}

    def evaluate(p: float) -> float:
        key = round(p / _MEMO_QUANTUM)
        if key not in memo:
            memo[key] = perf(run_backtest(dwp_targets(bundle, p), bundle.panel, config))
        return memo[key]

    return evaluate


@dataclass(frozen=True)
class GridSearchResult:
    p_star: float
    grid: np.ndarray
    values: np.ndarray            # NaN where evaluation failed
    skipped: tuple = ()           # (p, reason) pairs

    def summary(self) -> dict:
        return {"p_star": self.p_star,
                "grid_points": int(self.grid.shape[0]),
                "evaluated": int(np.sum(np.isfinite(self.values))),
                "skipped": [{"p": p, "reason": r} for p, r in self.skipped],
                "best_value": float(self.values[self.grid == self.p_star][0])}


def grid_search_dwp(bundle: PanelBundle, perf: PerfFunctional | None = None,
                    lo: float = -8.0, hi: float = 8.0, mesh: float = 0.05,
                    config: BacktestConfig = BacktestConfig()) -> GridSearchResult:
    """Exhaustive exponent search on the uniform grid; ties break toward
    the exponent of smallest magnitude."""
    if not (mesh > 0):
        raise InvalidArgumentError("mesh must be positive")
    if not (lo < hi):
        raise InvalidArgumentError("lo must be below hi")
    n_pts = int(math.floor((hi - lo) / mesh + 1e-9)) + 1
    grid = lo + mesh * np.arange(n_pts)
    evaluate = _dwp_perf_evaluator(bundle, perf, config)
    values = np.full(n_pts, np.nan)
    skipped = []
    for i, p in enumerate(grid):
        try:
            values[i] = evaluate(float(p))
        except SptlabError as err:
            skipped.append((float(p), str(err)))
            logger.warning("grid point p=%s skipped: %s", p, err)
    if not np.any(np.isfinite(values)):
        raise NoFeasiblePointError("every grid point failed to backtest")
    best = np.nanmax(values)
    candidates = grid[values == best]
    p_star = float(min(candidates, key=lambda p: (abs(p), p)))
    return GridSearchResult(p_star, grid, values, tuple(skipped))


def random_walk_mh(log_target: Callable[[float], float], x0: float,
                   iterations: int, proposal_std: float,
                   bounds: tuple[float, float], rng: np.random.Generator,
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gaussian random-walk Metropolis-Hastings on a bounded interval.

    Proposals outside the bounds are rejected outright (the indicator in
    the acceptance ratio); otherwise acceptance is decided in log space.
    Returns (samples, log target values, accepted flags), one row per
    iteration.
    """
    lo, hi = bounds
    x = float(x0)
    lx = float(log_target(x))
    if not math.isfinite(lx):
        raise InitializationError(f"log target is {lx!r} at the starting point {x0!r}")
    samples = np.empty(iterations)
    logliks = np.empty(iterations)
    accepted = np.zeros(iterations, dtype=bool)
    for i in range(iterations):
        prop = x + rng.normal(0.0, proposal_std)
        if lo <= prop <= hi:
            lp = float(log_target(prop))
            if math.isnan(lp):
                raise InvalidArgumentError(f"log target returned NaN at {prop!r}")
            if math.log(rng.uniform()) < lp - lx:
                x, lx = prop, lp
                accepted[i] = True
        samples[i] = x
        logliks[i] = lx
    return samples, logliks, accepted


@dataclass(frozen=True)
class ExponentChain:
    """A Metropolis-Hastings run over the DWP exponent."""

    samples: np.ndarray
    log_liks: np.ndarray
    accepted: np.ndarray
    burn_in: int
    proposal_std: float
    bounds: tuple
    initial_p: float
    seed: int

    def __post_init__(self):
        lo, hi = self.bounds
        if np.any(self.samples < lo) or np.any(self.samples > hi):
            raise InvalidArgumentError("chain left the support bounds")

    @property
    def retained(self) -> np.ndarray:
        return self.samples[self.burn_in:]

    @property
    def posterior_mean(self) -> float:
        return float(self.retained.mean())

    @property
    def posterior_std(self) -> float:
        return float(self.retained.std(ddof=1))

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted[self.burn_in:].mean())

    def to_csv(self) -> str:
        lines = ["iter,p,log_lik,accepted"]
        for i in range(self.samples.shape[0]):
            lines.append(f"{i},{float(self.samples[i])!r},{float(self.log_liks[i])!r},"
                         f"{int(self.accepted[i])}")
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"posterior_mean": self.posterior_mean,
                "posterior_std": self.posterior_std,
                "acceptance_rate": self.acceptance_rate,
                "iterations": int(self.samples.shape[0]),
                "burn_in": int(self.burn_in),
                "proposal_std": float(self.proposal_std),
                "bounds": [float(self.bounds[0]), float(self.bounds[1])],
                "initial_p": float(self.initial_p),
                "seed": int(self.seed)}


def mh_sample_dwp(bundle: PanelBundle, perf: PerfFunctional | None = None,
                  lik: GammaLikelihood = GammaLikelihood(), *,
                  iterations: int = 10_000, burn_in: int = 5_000,
                  proposal_std: float = 0.5, lo: float = -8.0, hi: float = 8.0,
                  initial_p: float = 0.0, seed: int = 0,
                  config: BacktestConfig = BacktestConfig()) -> ExponentChain:
    """Sample the exponent posterior: Gamma likelihood of backtest
    performance, flat prior on [lo, hi]."""
    if not (lo < hi):
        raise InvalidArgumentError("lo must be below hi")
    if not (lo <= initial_p <= hi):
        raise InvalidArgumentError(f"initial p {initial_p!r} outside [{lo}, {hi}]")
    if not (0 <= burn_in < iterations):
        raise InvalidArgumentError("need 0 <= burn_in < iterations")
    if not (proposal_std > 0):
        raise InvalidArgumentError("proposal_std must be positive")
    evaluate = _dwp_perf_evaluator(bundle, perf, config)

    def log_target(p: float) -> float:
        try:
            value = evaluate(p)
        except SptlabError:
            return -math.inf
        return gamma_log_density(value, lik)

    if not math.isfinite(log_target(initial_p)):
        raise InitializationError(
            f"performance likelihood is -inf at initial p={initial_p!r}; "
            "start the chain at an exponent with positive performance")
    rng = np.random.default_rng(seed)
    samples, logliks, accepted = random_walk_mh(
        log_target, initial_p, iterations, proposal_std, (lo, hi), rng)
    return ExponentChain(samples, logliks, accepted, burn_in, proposal_std,
                         (float(lo), float(hi)), float(initial_p), int(seed))
