"""Ito-process equity market: simulation and structural diagnostics.

Stock capitalisations follow dX_i = X_i (b_i dt + sum_nu sigma_inu dW_nu).
The baseline simulator uses constant coefficients (multi-asset GBM) stepped
exactly in log space, which keeps capitalisations strictly positive. Time or
state dependent coefficients can be supplied as callbacks; those are frozen
over each step (an Euler approximation in log space).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, InvalidArgumentError

CoefficientFn = Callable[[float, np.ndarray], np.ndarray]


@dataclass
class MarketParams:
    """Constant-coefficient market description.

    n assets driven by d >= n independent Brownian motions. ``drifts`` are
    per-asset rates of return (1/year), ``sigma`` is the n x d volatility
    matrix (1/sqrt(year)) and ``x0`` the positive initial capitalisations.
    """

    n: int
    d: int
    drifts: np.ndarray
    sigma: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        self.drifts = np.asarray(self.drifts, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.n < 1:
            raise InvalidArgumentError("asset count must be >= 1")
        if self.d < self.n:
            raise InvalidArgumentError(
                f"Brownian dimension d={self.d} must be >= asset count n={self.n}"
            )
        if self.drifts.shape != (self.n,):
            raise InvalidArgumentError("drifts must have shape (n,)")
        if self.sigma.shape != (self.n, self.d):
            raise InvalidArgumentError("sigma must have shape (n, d)")
        if self.x0.shape != (self.n,):
            raise InvalidArgumentError("x0 must have shape (n,)")
        if not np.all(self.x0 > 0):
            raise InvalidArgumentError("all initial capitalisations must be > 0")
        if not (np.all(np.isfinite(self.drifts)) and np.all(np.isfinite(self.sigma))):
            raise InvalidArgumentError("drifts and sigma must be finite")

    @classmethod
    def gbm(cls, n: int, drift: float = 0.05, vol: float = 0.2,
            x0: Sequence[float] | float = 1.0) -> "MarketParams":
        """Diagonal GBM market: sigma = vol * I, equal drifts."""
        x0_arr = np.full(n, float(x0)) if np.isscalar(x0) else np.asarray(x0, dtype=float)
        return cls(n=n, d=n, drifts=np.full(n, float(drift)),
                   sigma=vol * np.eye(n), x0=x0_arr)


@dataclass
class MarketPath:
    """Simulated capitalisations on a time grid, with derived market weights."""

    times: np.ndarray          # (M+1,) strictly increasing, years
    caps: np.ndarray           # (M+1, n) positive capitalisations
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.caps = np.asarray(self.caps, dtype=float)
        if self.times.ndim != 1 or self.caps.ndim != 2:
            raise InvalidArgumentError("times must be 1-d and caps 2-d")
        if self.caps.shape[0] != self.times.shape[0]:
            raise InvalidArgumentError("caps must have one row per time point")
        if not np.all(np.diff(self.times) > 0):
            raise InvalidArgumentError("times must be strictly increasing")
        if not np.all(self.caps > 0):
            raise InvalidArgumentError("capitalisations must be positive")
        self.weights = self.caps / self.caps.sum(axis=1, keepdims=True)

    @property
    def n_assets(self) -> int:
        return self.caps.shape[1]

    @property
    def n_steps(self) -> int:
        return self.caps.shape[0] - 1

    def to_csv(self) -> str:
        """Serialize as ``t,asset_1..asset_n`` rows of capitalisations only."""
        n = self.n_assets
        buf = io.StringIO()
        buf.write("t," + ",".join(f"asset_{i + 1}" for i in range(n)) + "\n")
        for t, row in zip(self.times, self.caps):
            buf.write(repr(float(t)) + "," + ",".join(repr(float(x)) for x in row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "MarketPath":
        """Parse the ``to_csv`` format; weights are recomputed on load."""
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("t,"):
            raise InvalidArgumentError("expected header 't,asset_1..asset_n'")
        rows = [[float(x) for x in ln.split(",")] for ln in lines[1:]]
        arr = np.asarray(rows, dtype=float)
        return cls(times=arr[:, 0], caps=arr[:, 1:])


@dataclass
class RelativeCovariance:
    """Covariance of stock returns measured relative to the market portfolio."""

    tau: np.ndarray  # (n, n), symmetric, PSD on the simplex tangent space

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        if self.tau.ndim != 2 or self.tau.shape[0] != self.tau.shape[1]:
            raise InvalidArgumentError("tau must be square")
        if not np.allclose(self.tau, self.tau.T, atol=1e-12, rtol=0.0):
            raise InvalidArgumentError("tau must be symmetric within 1e-12")


def market_weights(caps_row: np.ndarray) -> np.ndarray:
    """Market weights: each capitalisation divided by the total.

    Invariant under positive scaling of the input (bitwise for powers of 2).
    """
    caps_row = np.asarray(caps_row, dtype=float)
    if np.any(caps_row <= 0):
        raise DomainError("capitalisations must be strictly positive")
    return caps_row / caps_row.sum()


def simulate_market(params: MarketParams, horizon: float, dt: float,
                    seed: int, drift_fn: CoefficientFn | None = None,
                    vol_fn: CoefficientFn | None = None) -> MarketPath:
    """Simulate the market with an exact log-space GBM step per increment.

    log X_i(t+dt) = log X_i(t) + (b_i - 0.5 * sum_nu sigma_inu^2) dt
                    + sum_nu sigma_inu sqrt(dt) Z_nu

    with Z standard normal. The d Brownian increments of a step are drawn in
    index order, steps in time order, from ``np.random.default_rng(seed)``,
    so paths are reproducible bit-for-bit from the seed.

    ``drift_fn`` / ``vol_fn`` override the constant coefficients with values
    frozen at the start of each step (callback extension point).
    """
    if dt <= 0:
        raise InvalidArgumentError("dt must be > 0")
    if horizon < dt:
        raise InvalidArgumentError("horizon must be >= dt")
    n_steps = int(round(horizon / dt))
    times = np.arange(n_steps + 1) * dt
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_steps, params.d))

    if drift_fn is None and vol_fn is None:
        var = np.sum(params.sigma ** 2, axis=1)
        increments = (params.drifts - 0.5 * var) * dt + math.sqrt(dt) * z @ params.sigma.T
        log_caps = np.log(params.x0) + np.concatenate(
            [np.zeros((1, params.n)), np.cumsum(increments, axis=0)])
        return MarketPath(times=times, caps=np.exp(log_caps))

    log_caps = np.empty((n_steps + 1, params.n))
    log_caps[0] = np.log(params.x0)
    for k in range(n_steps):
        caps_k = np.exp(log_caps[k])
        b = drift_fn(times[k], caps_k) if drift_fn is not None else params.drifts
        sig = vol_fn(times[k], caps_k) if vol_fn is not None else params.sigma
        sig = np.asarray(sig, dtype=float)
        var = np.sum(sig ** 2, axis=1)
        log_caps[k + 1] = log_caps[k] + (b - 0.5 * var) * dt + math.sqrt(dt) * sig @ z[k]
    return MarketPath(times=times, caps=np.exp(log_caps))


def coarsen_path(path: MarketPath, factor: int) -> MarketPath:
    """Subsample a path every ``factor`` steps.

    Because the log-space GBM step is exact and Brownian increments add,
    subsampling the fine path equals simulating on the coarse grid with the
    aggregated increments, keeping the limit object fixed across refinements.
    """
    if factor < 1 or path.n_steps % factor != 0:
        raise InvalidArgumentError("factor must divide the number of steps")
    return MarketPath(times=path.times[::factor], caps=path.caps[::factor])


def check_diversity(path: MarketPath, delta: float) -> bool:
    """True iff max_i,t of the market weights stays below 1 - delta."""
    if not 0 < delta < 1:
        raise InvalidArgumentError("delta must lie in (0, 1)")
    return bool(np.max(path.weights) < 1.0 - delta)


def check_nondegeneracy(sigma: np.ndarray, epsilon: float) -> bool:
    """True iff the smallest eigenvalue of sigma sigma^T is >= epsilon."""
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be > 0")
    sigma = np.asarray(sigma, dtype=float)
    a = sigma @ sigma.T
    return bool(np.linalg.eigvalsh(a)[0] >= epsilon)


def _relative_covariance_matrix(cov: np.ndarray, mu: np.ndarray) -> np.ndarray:
    """tau_ij = (mu - e_i)^T cov (mu - e_j), symmetric by construction."""
    cov_mu = cov @ mu
    quad = float(mu @ cov_mu)
    return cov + quad - cov_mu[:, None] - cov_mu[None, :]


def relative_covariance(sigma: np.ndarray, mu: np.ndarray) -> RelativeCovariance:
    """Relative covariances of returns versus the market portfolio.

    The market-weight vector is in the kernel: tau @ mu = 0, since the
    weighted average of (mu - e_j) vanishes.
    """
    sigma = np.asarray(sigma, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if sigma.ndim != 2 or mu.ndim != 1 or sigma.shape[0] != mu.shape[0]:
        raise InvalidArgumentError("sigma must be n x d and mu length n")
    tau = _relative_covariance_matrix(sigma @ sigma.T, mu)
    if np.max(np.abs(tau @ mu)) > 1e-10:
        raise InvalidArgumentError("tau @ mu deviates from zero beyond 1e-10")
    return RelativeCovariance(tau=tau)


def arbitrage_horizon_bound(n: float, epsilon: float, delta: float, p: float) -> float:
    """Horizon beyond which the diversity-weighted portfolio outperforms.

    Returns 2 log(n) / (epsilon * delta * p). ``n`` is accepted as a real
    number >= 1 so the bound is usable as a continuous helper.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if epsilon <= 0:
        raise InvalidArgumentError("epsilon must be > 0")
    if not 0 < delta < 1:
        raise InvalidArgumentError("delta must lie in (0, 1)")
    if not 0 < p < 1:
        raise InvalidArgumentError("p must lie in (0, 1)")
    return 2.0 * math.log(n) / (epsilon * delta * p)
