"""Discrete-time wealth accounting with proportional transaction costs,
plus the performance functionals (Sharpe ratio, excess return) built on it.

Accounting convention: a target weight row k is the portfolio held over
return row k. After the day's returns the held weights have drifted; the
rebalance trade to the next target pays ``tc_rate`` per unit of absolute
weight traded, on post-return wealth. The strategy therefore supplies T+1
rows for T return days: the final row is the rebalance executed after the
last day's close (so a buy-and-hold market portfolio pays nothing, while a
constantly rebalanced rule pays on every day including the last).

Initial acquisition from cash is free by default; set
``charge_initial_acquisition`` to pay ``tc_rate`` on the first target's
notional, which is then reflected in V(0).
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import (
    DataError,
    DomainError,
    InvalidArgumentError,
    MembershipError,
    NotLongOnlyError,
    UndefinedSharpeError,
)

Strategy = Union[np.ndarray, Callable[[int], np.ndarray]]

_WEIGHT_SUM_TOL = 1e-8


@dataclass(frozen=True)
class ReturnsPanel:
    """Simple per-period returns for n assets over T trading days.

    ``dates`` are ordered day identifiers (ISO dates for ingested data;
    synthetic panels use sortable identifiers whose first four characters
    are the year). Returns are validated only where ``membership`` is true;
    a return of exactly -1 wipes the position out with no error.
    """

    dates: np.ndarray
    r: np.ndarray
    membership: np.ndarray
    asset_ids: tuple = ()

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype=str)
        r = np.asarray(self.r, dtype=float)
        if r.ndim != 2:
            raise DataError("returns must be a T x n matrix")
        t, n = r.shape
        if dates.shape != (t,):
            raise DataError(f"{dates.shape[0]} dates for {t} return rows")
        if t and np.any(dates[1:] <= dates[:-1]):
            raise DataError("dates must be strictly increasing")
        member = self.membership
        if member is None:
            member = np.ones((t, n), dtype=bool)
        member = np.asarray(member, dtype=bool)
        if member.shape != (t, n):
            raise DataError(f"membership shape {member.shape} != {(t, n)}")
        active = r[member]
        if np.any(~np.isfinite(active)) or np.any(active < -1.0):
            raise DataError("member returns must be finite and >= -1")
        ids = tuple(self.asset_ids) or tuple(f"asset_{i + 1}" for i in range(n))
        if len(ids) != n:
            raise DataError(f"{len(ids)} asset ids for {n} assets")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "membership", member)
        object.__setattr__(self, "asset_ids", ids)

    @property
    def n_days(self) -> int:
        return self.r.shape[0]

    @property
    def n_assets(self) -> int:
        return self.r.shape[1]

    def window(self, lo: int, hi: int) -> "ReturnsPanel":
        """Panel restricted to return rows lo:hi."""
        return ReturnsPanel(self.dates[lo:hi], self.r[lo:hi],
                            self.membership[lo:hi], self.asset_ids)

    def to_csv(self) -> str:
        out = io.StringIO()
        out.write("date,asset_id,return,member\n")
        for t in range(self.n_days):
            for i, aid in enumerate(self.asset_ids):
                out.write(f"{self.dates[t]},{aid},{float(self.r[t, i])!r},"
                          f"{int(self.membership[t, i])}\n")
        return out.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ReturnsPanel":
        from .panel_io import parse_returns_csv
        return parse_returns_csv(text)


@dataclass(frozen=True)
class BacktestConfig:
    tc_rate: float = 0.001
    periods_per_year: int = 252
    initial_wealth: float = 1.0
    charge_initial_acquisition: bool = False

    def __post_init__(self):
        if not (self.tc_rate >= 0):
            raise InvalidArgumentError("tc_rate must be >= 0")
        if int(self.periods_per_year) < 1:
            raise InvalidArgumentError("periods_per_year must be >= 1")
        if not (self.initial_wealth > 0):
            raise InvalidArgumentError("initial_wealth must be positive")


@dataclass(frozen=True)
class WealthSeries:
    """Backtest output: wealth path plus per-day accounting.

    V has T+1 entries (V[0] is starting wealth); the recursion
    V[t+1] = V[t] * (1 + returns[t]) - costs[t] holds exactly as computed.
    """

    dates: np.ndarray
    V: np.ndarray
    portfolio_returns: np.ndarray
    turnover: np.ndarray
    costs: np.ndarray
    bankrupt: bool = False

    def __post_init__(self):
        t = self.dates.shape[0]
        for name in ("portfolio_returns", "turnover", "costs"):
            if getattr(self, name).shape != (t,):
                raise InvalidArgumentError(f"{name} must have {t} entries")
        if self.V.shape != (t + 1,):
            raise InvalidArgumentError("V must have T+1 entries")

    @property
    def terminal_wealth(self) -> float:
        return float(self.V[-1])

    def to_csv(self) -> str:
        lines = ["date,wealth,return,turnover,cost"]
        for t in range(self.dates.shape[0]):
            lines.append(f"{self.dates[t]},{float(self.V[t + 1])!r},"
                         f"{float(self.portfolio_returns[t])!r},"
                         f"{float(self.turnover[t])!r},{float(self.costs[t])!r}")
        return "\n".join(lines) + "\n"


def _materialize_targets(strategy: Strategy, panel: ReturnsPanel) -> np.ndarray:
    t, n = panel.r.shape
    if callable(strategy):
        rows = np.stack([np.asarray(strategy(k), dtype=float) for k in range(t + 1)])
    else:
        rows = np.asarray(strategy, dtype=float)
    if rows.shape != (t + 1, n):
        raise InvalidArgumentError(
            f"strategy must supply {(t + 1, n)} target weights, got {rows.shape}")
    if np.any(rows < 0):
        raise NotLongOnlyError(f"negative target weight {rows.min()!r}")
    if np.any(np.abs(rows.sum(axis=1) - 1.0) > _WEIGHT_SUM_TOL):
        k = int(np.argmax(np.abs(rows.sum(axis=1) - 1.0)))
        raise InvalidArgumentError(
            f"target weights on day {k} sum to {rows[k].sum()!r}")
    return rows


def _check_membership(targets: np.ndarray, panel: ReturnsPanel) -> None:
    # the final rebalance row is checked against the last known universe
    member = np.vstack([panel.membership, panel.membership[-1:]])
    offend = (targets > 0) & ~member
    if np.any(offend):
        t, i = np.unravel_index(int(np.argmax(offend)), offend.shape)
        date = panel.dates[min(t, panel.n_days - 1)]
        raise MembershipError(str(date), panel.asset_ids[i])


def run_backtest(strategy: Strategy, panel: ReturnsPanel,
                 config: BacktestConfig = BacktestConfig()) -> WealthSeries:
    """Run the wealth recursion for one strategy over one panel.

    ``strategy`` is either a (T+1, n) array of target weights or a callable
    mapping day index k (0..T) to that day's target row. Weights must be
    long-only, sum to one, and avoid non-member assets.
    """
    if panel.n_days < 1:
        raise InvalidArgumentError("panel has no return rows")
    targets = _materialize_targets(strategy, panel)
    _check_membership(targets, panel)
    r_eff = np.where(panel.membership, panel.r, 0.0)

    port_ret = np.einsum("tn,tn->t", targets[:-1], r_eff)
    q = 1.0 + port_ret
    with np.errstate(divide="ignore", invalid="ignore"):
        drifted = targets[:-1] * (1.0 + r_eff) / q[:, None]
    dead = q <= 0.0
    drifted[dead] = 0.0
    turnover = np.abs(targets[1:] - drifted).sum(axis=1)
    turnover[dead] = 0.0

    v0 = config.initial_wealth
    if config.charge_initial_acquisition:
        v0 = v0 - config.tc_rate * np.abs(targets[0]).sum() * v0

    factors = q * (1.0 - config.tc_rate * turnover)
    factors[0] *= v0
    v = np.empty(panel.n_days + 1)
    v[0] = v0
    v[1:] = np.cumprod(factors)
    costs = v[:-1] * q - v[1:]

    bankrupt = bool(np.any(v[1:] <= 0.0))
    if bankrupt:
        kb = int(np.argmax(v[1:] <= 0.0))
        v = np.maximum(v[:kb + 2], 0.0)
        port_ret, turnover, costs = port_ret[:kb + 1], turnover[:kb + 1], costs[:kb + 1]
        turnover[kb] = 0.0
        costs[kb] = 0.0
        return WealthSeries(panel.dates[:kb + 1], v, port_ret, turnover, costs,
                            bankrupt=True)
    return WealthSeries(panel.dates, v, port_ret, turnover, costs)


def sharpe_ratio(returns: Sequence[float], periods_per_year: int = 252) -> float:
    """sqrt(B) x sample mean over sample standard deviation (T-1 divisor)."""
    returns = np.asarray(returns, dtype=float)
    if returns.shape[0] < 2:
        raise InvalidArgumentError("need at least two returns")
    sd = float(returns.std(ddof=1))
    if sd == 0.0:
        raise UndefinedSharpeError("returns have zero sample standard deviation")
    return float(np.sqrt(periods_per_year) * returns.mean() / sd)


def excess_return(candidate: Strategy, benchmark: Strategy, panel: ReturnsPanel,
                  config: BacktestConfig = BacktestConfig()) -> float:
    """Difference of cost-adjusted terminal wealths, candidate minus benchmark."""
    v_c = run_backtest(candidate, panel, config).terminal_wealth
    v_b = run_backtest(benchmark, panel, config).terminal_wealth
    return v_c - v_b


def annualize_return(series: WealthSeries, periods_per_year: int = 252) -> float:
    """(V(T)/V(0))^(B/T) - 1."""
    t = series.V.shape[0] - 1
    if t < 1:
        raise InvalidArgumentError("need at least one period")
    if series.V[-1] <= 0:
        raise DomainError("terminal wealth must be positive to annualize")
    return float((series.V[-1] / series.V[0]) ** (periods_per_year / t) - 1.0)
