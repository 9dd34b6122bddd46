"""Simulated market data shaped like ingested panels.

Synthetic trading-day identifiers look like ``2003-D117`` (year, then day
index within the year): sortable, year-prefixed like ISO dates, and never
confusable with a real calendar. All builders route through the same
known-frame machinery as CSV ingestion, so serialized round trips are
bitwise faithful.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError
from .market import MarketParams, MarketPath, simulate_market
from .panel_io import PanelBundle, channels_from_known, derive_mu_channel


def synthetic_dates(n_days: int, start_year: int = 2000,
                    periods_per_year: int = 252) -> np.ndarray:
    idx = np.arange(n_days)
    return np.array([f"{start_year + k // periods_per_year:04d}-D{k % periods_per_year:03d}"
                     for k in idx])


def bundle_from_path(path: MarketPath, start_year: int = 2000,
                     periods_per_year: int = 252,
                     extra_known: dict | None = None,
                     extra_initial: dict | None = None) -> PanelBundle:
    """Wrap a simulated capitalization path as a panel bundle.

    The "cap" known frame records each day's closing capitalizations; its
    formation channel is therefore exactly the path's capitalization rows,
    and "mu" reproduces the path's market weights.
    """
    caps = path.caps
    t = caps.shape[0] - 1
    if t < 1:
        raise InvalidArgumentError("path needs at least one step")
    r = caps[1:] / caps[:-1] - 1.0
    dates = synthetic_dates(t, start_year, periods_per_year)
    panel_membership = np.ones((t, caps.shape[1]), dtype=bool)
    from .backtest import ReturnsPanel
    panel = ReturnsPanel(dates, r, panel_membership)

    known = {"cap": caps[1:]}
    channels = {"cap": channels_from_known(caps[1:], caps[0])}
    for name, frame in (extra_known or {}).items():
        initial = (extra_initial or {}).get(name, frame[0])
        known[name] = np.asarray(frame, dtype=float)
        channels[name] = channels_from_known(known[name], initial)
    channels["mu"] = derive_mu_channel(channels["cap"], panel.membership)
    return PanelBundle(panel, channels, known)


def gbm_bundle(n: int = 10, years: float = 10.0, seed: int = 0,
               drift: float = 0.05, vol: float = 0.2, cap_spread: float = 1.5,
               start_year: int = 2000, periods_per_year: int = 252) -> PanelBundle:
    """Independent geometric Brownian motions with geometrically spread
    initial capitalizations."""
    x0 = cap_spread ** np.arange(n)
    params = MarketParams.gbm(n, drift=drift, vol=vol, x0=x0)
    path = simulate_market(params, horizon=years, dt=1.0 / periods_per_year, seed=seed)
    return bundle_from_path(path, start_year, periods_per_year)


def planted_premium_bundle(n: int = 10, years: float = 10.0, seed: int = 0,
                           premium: float = 5e-4, drift: float = 0.05,
                           vol: float = 0.2, cap_spread: float = 1.5,
                           start_year: int = 2000,
                           periods_per_year: int = 252) -> PanelBundle:
    """GBM market where the currently smallest-cap asset earns ``premium``
    extra simple return each day.

    Rebuilding capitalizations day by day keeps weights, returns and the
    "cap"/"mu" channels mutually consistent, so the market portfolio still
    backtests with zero turnover.
    """
    x0 = cap_spread ** np.arange(n)
    params = MarketParams.gbm(n, drift=drift, vol=vol, x0=x0)
    base = simulate_market(params, horizon=years, dt=1.0 / periods_per_year, seed=seed)
    gross = base.caps[1:] / base.caps[:-1]
    t = gross.shape[0]
    caps = np.empty_like(base.caps)
    caps[0] = x0
    for k in range(t):
        g = gross[k].copy()
        g[np.argmin(caps[k])] += premium
        caps[k + 1] = caps[k] * g
    path = MarketPath(base.times, caps)
    return bundle_from_path(path, start_year, periods_per_year)


def quarterly_known_frame(n_days: int, n_assets: int, seed: int = 0,
                          period: int = 63, loc: float = 0.05,
                          scale: float = 0.02) -> tuple[np.ndarray, np.ndarray]:
    """A slow characteristic in the known frame: per-asset values follow a
    random walk that moves only every ``period`` days (think quarterly
    reports). Returns (frame, pre-sample row)."""
    rng = np.random.default_rng(seed)
    n_quarters = n_days // period + 2
    levels = loc + scale * np.cumsum(rng.standard_normal((n_quarters, n_assets)), axis=0)
    initial = levels[0]
    day_quarter = 1 + np.arange(n_days) // period
    return levels[day_quarter], initial


def add_channel(bundle: PanelBundle, name: str, known_frame: np.ndarray,
                initial: np.ndarray) -> PanelBundle:
    """Bundle with one more characteristic, respecting formation timing."""
    known = dict(bundle.known)
    channels = dict(bundle.channels)
    known[name] = np.asarray(known_frame, dtype=float)
    channels[name] = channels_from_known(known[name], initial)
    return PanelBundle(bundle.panel, channels, known, bundle.warnings)
