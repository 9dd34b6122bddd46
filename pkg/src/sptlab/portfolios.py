"""Portfolio weight rules: equal-weight, market, diversity-weighted,
functionally-generated (classic and covariate-extended) and investment-map
portfolios.

All rules return long-only weights on the closed unit simplex. Powers and
map values are handled in log space so extreme exponents (|p| up to 8) on
tiny market weights neither overflow nor underflow.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    DomainError,
    EvaluationError,
    InvalidArgumentError,
    NotLongOnlyError,
)

_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)   # central-difference gradient step
_QRT_EPS = float(np.finfo(float).eps) ** 0.25           # central-difference Hessian step

_NEG_TOL = 1e-10  # weights below -_NEG_TOL are an error, above are clamped to 0


def normalize_log_weights(log_values: np.ndarray) -> np.ndarray:
    """exp(log_values) normalized to sum 1, computed stably via log-sum-exp."""
    log_values = np.asarray(log_values, dtype=float)
    w = np.exp(log_values - np.max(log_values))
    return w / w.sum()


def validate_weights(w: np.ndarray, tol: float = 1e-12) -> None:
    """Assert the simplex invariants: entries >= 0 and sum 1 within tol."""
    w = np.asarray(w, dtype=float)
    if np.any(w < 0):
        raise NotLongOnlyError(f"negative weight {w.min()!r}")
    if abs(w.sum() - 1.0) > tol:
        raise InvalidArgumentError(f"weights sum to {w.sum()!r}, not 1")


def ewp_weights(n: int) -> np.ndarray:
    """Equal weights 1/n."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    w = np.full(n, 1.0 / n)
    return w / w.sum()


def dwp_weights(mu: np.ndarray, p: float) -> np.ndarray:
    """Diversity-weighted portfolio: weights proportional to mu_i^p.

    p = 1 is the market portfolio, p = 0 the equal-weight portfolio (both
    returned exactly). Other exponents go through log space.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.isfinite(p):
        raise InvalidArgumentError("p must be finite")
    if np.any(mu < 0):
        raise DomainError("market weights must be non-negative")
    if p <= 0 and np.any(mu == 0):
        raise DomainError("zero market weight with non-positive exponent")
    if p == 0:
        return ewp_weights(mu.shape[0])
    if p == 1:
        return mu / mu.sum()
    with np.errstate(divide="ignore"):  # mu == 0 with p > 0 contributes weight 0
        return normalize_log_weights(p * np.log(mu))


def _fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central finite differences, per-coordinate step cbrt(eps) * scale."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.shape[0]):
        h = _CBRT_EPS * max(abs(x[i]), _CBRT_EPS)
        e = np.zeros_like(x)
        e[i] = h
        grad[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return grad


def _fd_hessian(f: Callable[[np.ndarray], float], x: np.ndarray) -> np.ndarray:
    """Central second differences with per-coordinate steps that keep
    perturbed points inside the positive orthant for simplex arguments."""
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    h = _QRT_EPS * np.maximum(np.abs(x), _QRT_EPS)
    hess = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        hess[i, i] = (f(x + ei) - 2.0 * f0 + f(x - ei)) / (h[i] * h[i])
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            hess[i, j] = hess[j, i] = (
                f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return hess


class GeneratingFunction:
    """Positive C^2 function on (a neighbourhood of) the open simplex.

    ``gradient`` and ``hessian`` may be omitted; central finite differences
    are used in their place. Subclasses for the standard generators supply
    analytic derivatives and vectorized row evaluation.
    """

    name = "custom"

    def __init__(self, value: Callable[[np.ndarray], float],
                 gradient: Callable[[np.ndarray], np.ndarray] | None = None,
                 hessian: Callable[[np.ndarray], np.ndarray] | None = None,
                 name: str = "custom"):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.name = name

    def value(self, x: np.ndarray) -> float:
        return float(self._value(np.asarray(x, dtype=float)))

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._gradient is not None:
            return np.asarray(self._gradient(x), dtype=float)
        return _fd_gradient(self._value, x)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self._hessian is not None:
            return np.asarray(self._hessian(x), dtype=float)
        return _fd_hessian(self._value, x)

    # row-wise evaluation over an (T, n) array; subclasses vectorize
    def value_rows(self, rows: np.ndarray) -> np.ndarray:
        return np.array([self.value(r) for r in rows])

    def gradient_rows(self, rows: np.ndarray) -> np.ndarray:
        return np.stack([self.gradient(r) for r in rows])

    def hessian_rows(self, rows: np.ndarray) -> np.ndarray:
        return np.stack([self.hessian(r) for r in rows])


class ConstantGenerating(GeneratingFunction):
    """G identically equal to a positive constant; generates the market."""

    def __init__(self, c: float = 1.0):
        if c <= 0:
            raise InvalidArgumentError("constant generator must be positive")
        self.c = float(c)
        super().__init__(lambda x: self.c, name=f"constant[{c}]")

    def gradient(self, x):
        return np.zeros(np.asarray(x).shape[0])

    def hessian(self, x):
        n = np.asarray(x).shape[0]
        return np.zeros((n, n))

    def value_rows(self, rows):
        return np.full(rows.shape[0], self.c)

    def gradient_rows(self, rows):
        return np.zeros(rows.shape)

    def hessian_rows(self, rows):
        t, n = rows.shape
        return np.zeros((t, n, n))


class PowerMeanGenerating(GeneratingFunction):
    """G_p(x) = (sum x_i^p)^(1/p), p != 0; generates the DWP with exponent p."""

    def __init__(self, p: float):
        if p == 0 or not np.isfinite(p):
            raise InvalidArgumentError("power-mean exponent must be finite and nonzero")
        self.p = float(p)
        super().__init__(self._val, name=f"power_mean[{p}]")

    def _val(self, x):
        return np.sum(x ** self.p) ** (1.0 / self.p)

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        s = np.sum(x ** self.p)
        return s ** (1.0 / self.p - 1.0) * x ** (self.p - 1.0)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        p = self.p
        s = np.sum(x ** p)
        xm1 = x ** (p - 1.0)
        diag = np.diag(x ** (p - 2.0)) * s ** (1.0 / p - 1.0)
        return (p - 1.0) * (diag - s ** (1.0 / p - 2.0) * np.outer(xm1, xm1))

    def value_rows(self, rows):
        return np.sum(rows ** self.p, axis=1) ** (1.0 / self.p)

    def gradient_rows(self, rows):
        s = np.sum(rows ** self.p, axis=1)
        return s[:, None] ** (1.0 / self.p - 1.0) * rows ** (self.p - 1.0)

    def hessian_rows(self, rows):
        p = self.p
        s = np.sum(rows ** p, axis=1)
        xm1 = rows ** (p - 1.0)
        t, n = rows.shape
        hess = -s[:, None, None] ** (1.0 / p - 2.0) * xm1[:, :, None] * xm1[:, None, :]
        idx = np.arange(n)
        hess[:, idx, idx] += rows ** (p - 2.0) * s[:, None] ** (1.0 / p - 1.0)
        return (p - 1.0) * hess


class EntropyGenerating(GeneratingFunction):
    """Shannon entropy G(x) = -sum x_i log x_i; generates the entropy portfolio."""

    def __init__(self):
        super().__init__(lambda x: float(-np.sum(x * np.log(x))), name="entropy")

    def gradient(self, x):
        return -(np.log(np.asarray(x, dtype=float)) + 1.0)

    def hessian(self, x):
        return np.diag(-1.0 / np.asarray(x, dtype=float))

    def value_rows(self, rows):
        return -np.sum(rows * np.log(rows), axis=1)

    def gradient_rows(self, rows):
        return -(np.log(rows) + 1.0)

    def hessian_rows(self, rows):
        t, n = rows.shape
        hess = np.zeros((t, n, n))
        idx = np.arange(n)
        hess[:, idx, idx] = -1.0 / rows
        return hess


def _finish_fgp_weights(raw: np.ndarray, context: str = "") -> np.ndarray:
    """Clamp roundoff-level negatives, reject real ones, renormalize."""
    low = raw.min()
    if low < -_NEG_TOL:
        raise NotLongOnlyError(
            f"generating function is not long-only{context}: weight {low!r}")
    raw = np.maximum(raw, 0.0)
    return raw / raw.sum()


def fgp_weights(generator: GeneratingFunction, mu: np.ndarray) -> np.ndarray:
    """Weights of the portfolio generated by ``generator`` at market weights mu.

    pi_i / mu_i = D_i G / G + 1 - sum_j mu_j D_j G / G. Entries in
    [-1e-10, 0) are clamped to zero and the result renormalized; anything
    below that tolerance raises, since silently clipping a genuinely
    short-selling generator would corrupt downstream decomposition checks.
    """
    mu = np.asarray(mu, dtype=float)
    g = generator.value(mu)
    if not np.isfinite(g) or g <= 0:
        raise DomainError(f"generating function must be positive, got {g!r}")
    ratio = generator.gradient(mu) / g
    raw = mu * (ratio + 1.0 - float(mu @ ratio))
    return _finish_fgp_weights(raw)


def _fgp_rows_from_parts(mu_rows: np.ndarray, g: np.ndarray,
                         grad: np.ndarray) -> np.ndarray:
    """Row-wise generated weights from precomputed values and gradients."""
    bad = ~np.isfinite(g) | (g <= 0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise DomainError(f"generating function non-positive at step {k}: {g[k]!r}")
    ratio = grad / g[:, None]
    raw = mu_rows * (ratio + 1.0 - np.sum(mu_rows * ratio, axis=1, keepdims=True))
    low = raw.min(axis=1)
    if np.any(low < -_NEG_TOL):
        k = int(np.argmax(low < -_NEG_TOL))
        raise NotLongOnlyError(f"not long-only at step {k}: weight {low[k]!r}")
    raw = np.maximum(raw, 0.0)
    return raw / raw.sum(axis=1, keepdims=True)


def fgp_weights_rows(generator: GeneratingFunction, mu_rows: np.ndarray) -> np.ndarray:
    """Vectorized ``fgp_weights`` over rows of market weights."""
    mu_rows = np.asarray(mu_rows, dtype=float)
    return _fgp_rows_from_parts(mu_rows, generator.value_rows(mu_rows),
                                generator.gradient_rows(mu_rows))


class ExtendedGeneratingFunction:
    """Generating function of market weights plus k finite-variation covariates.

    ``value(mu, f)`` must be positive; portfolio weights use only the
    partial derivatives in the first n (market-weight) variables, while the
    covariate gradient D_{n+l} log H enters the extended decomposition's
    Stieltjes term.
    """

    def __init__(self, value: Callable[[np.ndarray, np.ndarray], float],
                 gradient_x: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 hessian_x: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 covariate_gradient: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None,
                 name: str = "custom"):
        self._value = value
        self._gradient_x = gradient_x
        self._hessian_x = hessian_x
        self._covariate_gradient = covariate_gradient
        self.name = name

    def value(self, mu: np.ndarray, f: np.ndarray) -> float:
        return float(self._value(np.asarray(mu, dtype=float), np.asarray(f, dtype=float)))

    def gradient_x(self, mu: np.ndarray, f: np.ndarray) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        f = np.asarray(f, dtype=float)
        if self._gradient_x is not None:
            return np.asarray(self._gradient_x(mu, f), dtype=float)
        return _fd_gradient(lambda x: self._value(x, f), mu)

    def hessian_x(self, mu: np.ndarray, f: np.ndarray) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        f = np.asarray(f, dtype=float)
        if self._hessian_x is not None:
            return np.asarray(self._hessian_x(mu, f), dtype=float)
        return _fd_hessian(lambda x: self._value(x, f), mu)

    def covariate_gradient(self, mu: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Partial derivatives of log value in the covariate variables."""
        mu = np.asarray(mu, dtype=float)
        f = np.asarray(f, dtype=float)
        if self._covariate_gradient is not None:
            return np.asarray(self._covariate_gradient(mu, f), dtype=float)
        return _fd_gradient(lambda c: np.log(self._value(mu, c)), f)

    def value_rows(self, mu_rows: np.ndarray, f_rows: np.ndarray) -> np.ndarray:
        return np.array([self.value(m, c) for m, c in zip(mu_rows, f_rows)])

    def gradient_x_rows(self, mu_rows: np.ndarray, f_rows: np.ndarray) -> np.ndarray:
        return np.stack([self.gradient_x(m, c) for m, c in zip(mu_rows, f_rows)])

    def hessian_x_rows(self, mu_rows: np.ndarray, f_rows: np.ndarray) -> np.ndarray:
        return np.stack([self.hessian_x(m, c) for m, c in zip(mu_rows, f_rows)])

    def covariate_gradient_rows(self, mu_rows: np.ndarray, f_rows: np.ndarray) -> np.ndarray:
        return np.stack([self.covariate_gradient(m, c) for m, c in zip(mu_rows, f_rows)])

    @classmethod
    def from_generating(cls, generator: GeneratingFunction) -> "ExtendedGeneratingFunction":
        """Covariate-independent wrapper around a classic generating function."""
        ext = cls(
            value=lambda mu, f: generator.value(mu),
            gradient_x=lambda mu, f: generator.gradient(mu),
            hessian_x=lambda mu, f: generator.hessian(mu),
            covariate_gradient=lambda mu, f: np.zeros_like(np.asarray(f, dtype=float)),
            name=generator.name,
        )
        # delegate the vectorized paths so classic and extended verification
        # run through identical float operations
        ext.value_rows = lambda mu_rows, f_rows: generator.value_rows(mu_rows)
        ext.gradient_x_rows = lambda mu_rows, f_rows: generator.gradient_rows(mu_rows)
        ext.hessian_x_rows = lambda mu_rows, f_rows: generator.hessian_rows(mu_rows)
        ext.covariate_gradient_rows = (
            lambda mu_rows, f_rows: np.zeros(np.asarray(f_rows, dtype=float).shape))
        return ext


def extended_fgp_weights(extended: ExtendedGeneratingFunction, mu: np.ndarray,
                         covariates: np.ndarray) -> np.ndarray:
    """Weights generated on the extended domain; partials in mu only."""
    mu = np.asarray(mu, dtype=float)
    covariates = np.asarray(covariates, dtype=float)
    h = extended.value(mu, covariates)
    if not np.isfinite(h) or h <= 0:
        raise DomainError(f"generating function must be positive, got {h!r}")
    ratio = extended.gradient_x(mu, covariates) / h
    raw = mu * (ratio + 1.0 - float(mu @ ratio))
    return _finish_fgp_weights(raw)


def extended_fgp_weights_rows(extended: ExtendedGeneratingFunction,
                              mu_rows: np.ndarray, f_rows: np.ndarray) -> np.ndarray:
    """Vectorized ``extended_fgp_weights`` over aligned rows."""
    mu_rows = np.asarray(mu_rows, dtype=float)
    f_rows = np.asarray(f_rows, dtype=float)
    return _fgp_rows_from_parts(mu_rows, extended.value_rows(mu_rows, f_rows),
                                extended.gradient_x_rows(mu_rows, f_rows))


def map_portfolio(f_log: Callable[[np.ndarray], float],
                  chars: np.ndarray | Sequence[Sequence[float]]) -> np.ndarray:
    """Investment-map portfolio: weights proportional to exp(f_log(x_i)).

    ``chars`` holds one row of trading characteristics per asset. Weights
    are strictly positive and invariant under additive shifts of f_log.
    """
    chars = np.atleast_2d(np.asarray(chars, dtype=float))
    if chars.shape[0] < 1:
        raise InvalidArgumentError("need at least one asset row")
    log_vals = np.empty(chars.shape[0])
    for i, row in enumerate(chars):
        v = float(f_log(row))
        if not np.isfinite(v):
            raise EvaluationError(f"investment map returned {v!r} for asset {i}")
        log_vals[i] = v
    return normalize_log_weights(log_vals)


def parse_generator(text: str) -> GeneratingFunction:
    """Build a generating function from a short spec string.

    Accepted forms: ``"entropy"``, ``"constant"``, ``"constant:c=2.0"``,
    ``"power_mean:p=0.5"``.
    """
    head, _, tail = text.strip().partition(":")
    kind = head.strip().lower().replace("-", "_")
    params: dict[str, float] = {}
    if tail:
        for item in tail.split(","):
            key, eq, val = item.partition("=")
            if not eq:
                raise InvalidArgumentError(f"malformed generator parameter {item!r}")
            try:
                params[key.strip()] = float(val)
            except ValueError as exc:
                raise InvalidArgumentError(f"non-numeric generator parameter {item!r}") from exc
    if kind == "entropy":
        return EntropyGenerating()
    if kind == "constant":
        return ConstantGenerating(params.get("c", 1.0))
    if kind == "power_mean":
        if "p" not in params:
            raise InvalidArgumentError("power_mean generator needs p, e.g. power_mean:p=0.5")
        return PowerMeanGenerating(params["p"])
    raise InvalidArgumentError(f"unknown generator kind {head!r}")
