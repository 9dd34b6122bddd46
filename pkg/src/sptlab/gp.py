"""Non-parametric investment-map learner.

The log investment map is given a zero-mean Gaussian-process prior over a
Cartesian grid of trading characteristics, with a separable product of
rational-quadratic kernels. The Gram matrix is never formed: per-dimension
eigendecompositions give a Kronecker-factored square root L, the map is
parameterized as log f = L X with X standard normal (robust to singular
Grams), and a blocked Gibbs sampler alternates elliptical slice updates of
X and of the centered log hyperparameters. Every likelihood evaluation is
a full transaction-cost backtest of the induced portfolio.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .backtest import BacktestConfig, run_backtest
from .errors import (
    DataError,
    InitializationError,
    InvalidArgumentError,
    NumericError,
    ResourceError,
    SptlabError,
)
from .inference import GammaLikelihood, gamma_log_density, make_excess_return_perf
from .panel_io import PanelBundle
from .strategies import build_char_rows

_MAX_GRID_CELLS = 100_000


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class CharGrid:
    """Cartesian grid of characteristic knots, cells enumerated in C order
    (last dimension fastest), matching np.kron's convention."""

    knots: tuple

    def __post_init__(self):
        knots = tuple(np.asarray(g, dtype=float) for g in self.knots)
        if not knots:
            raise InvalidArgumentError("grid needs at least one dimension")
        for i, g in enumerate(knots):
            if g.ndim != 1 or g.shape[0] < 1:
                raise InvalidArgumentError(f"dimension {i}: knots must be a 1-d vector")
            if not np.all(np.isfinite(g)):
                raise InvalidArgumentError(f"dimension {i}: knots must be finite")
            if np.any(np.diff(g) <= 0):
                raise InvalidArgumentError(f"dimension {i}: knots must be strictly increasing")
        object.__setattr__(self, "knots", knots)

    @property
    def n_dims(self) -> int:
        return len(self.knots)

    @property
    def shape(self) -> tuple:
        return tuple(g.shape[0] for g in self.knots)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def cell_coordinates(self) -> np.ndarray:
        """(N, d) knot coordinates of every cell, C order."""
        mesh = np.meshgrid(*self.knots, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def snap(self, points: np.ndarray) -> np.ndarray:
        """Flat cell index of the nearest knot per coordinate.

        Points are clamped to the grid's bounding box; an exact midpoint
        between two knots snaps to the lower one.
        """
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.n_dims:
            raise InvalidArgumentError(
                f"points have {points.shape[-1]} coordinates, grid has {self.n_dims}")
        if not np.all(np.isfinite(points)):
            raise DataError("cannot snap non-finite characteristic values")
        per_dim = []
        for i, g in enumerate(self.knots):
            mids = (g[:-1] + g[1:]) / 2.0
            per_dim.append(np.searchsorted(mids, points[..., i], side="left"))
        return np.ravel_multi_index(tuple(per_dim), self.shape)

    @classmethod
    def from_observations(cls, observations: np.ndarray,
                          sizes: Sequence[int] | None = None) -> "CharGrid":
        """Uniform knots spanning each dimension's observed range."""
        obs = np.asarray(observations, dtype=float).reshape(-1, np.shape(observations)[-1])
        obs = obs[np.all(np.isfinite(obs), axis=1)]
        if obs.shape[0] == 0:
            raise DataError("no finite observations to build a grid from")
        d = obs.shape[1]
        if sizes is None:
            sizes = default_grid_sizes(d)
        knots = []
        for i, m in enumerate(sizes):
            lo, hi = float(obs[:, i].min()), float(obs[:, i].max())
            if lo == hi:
                knots.append(np.array([lo]))
            else:
                knots.append(np.linspace(lo, hi, int(m)))
        return cls(tuple(knots))


def default_grid_sizes(d: int) -> tuple:
    if d == 1:
        return (64,)
    if d == 2:
        return (32, 32)
    return (8,) * d


# ---------------------------------------------------------------------------
# kernel and hyperparameters


def _hyper_names(d: int) -> tuple:
    return ("k0", *(f"l_{i + 1}" for i in range(d)),
            *(f"alpha_{i + 1}" for i in range(d)))


@dataclass(frozen=True)
class RQHypers:
    """Rational-quadratic product-kernel hyperparameters with independent
    log-normal priors (location/scale per hyperparameter, ordered
    k0, l_1..l_d, alpha_1..alpha_d)."""

    k0: float
    lengths: np.ndarray
    alphas: np.ndarray
    prior_loc: np.ndarray
    prior_scale: np.ndarray

    def __post_init__(self):
        lengths = np.atleast_1d(np.asarray(self.lengths, dtype=float))
        alphas = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        d = lengths.shape[0]
        if alphas.shape != (d,):
            raise InvalidArgumentError("lengths and alphas must have equal dimension")
        if not (self.k0 > 0 and np.all(lengths > 0) and np.all(alphas > 0)):
            raise InvalidArgumentError("hyperparameters must be positive")
        loc = np.asarray(self.prior_loc, dtype=float)
        scale = np.asarray(self.prior_scale, dtype=float)
        if loc.shape != (2 * d + 1,) or scale.shape != (2 * d + 1,):
            raise InvalidArgumentError("priors must have one (loc, scale) per hyperparameter")
        if not np.all(scale > 0):
            raise InvalidArgumentError("prior scales must be positive")
        object.__setattr__(self, "lengths", lengths)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "prior_loc", loc)
        object.__setattr__(self, "prior_scale", scale)

    @property
    def n_dims(self) -> int:
        return self.lengths.shape[0]

    def log_vector(self) -> np.ndarray:
        return np.concatenate([[math.log(self.k0)], np.log(self.lengths),
                               np.log(self.alphas)])

    def centered(self) -> np.ndarray:
        return (self.log_vector() - self.prior_loc) / self.prior_scale

    def from_centered(self, eta: np.ndarray) -> "RQHypers":
        log_v = self.prior_loc + self.prior_scale * np.asarray(eta, dtype=float)
        d = self.n_dims
        return RQHypers(math.exp(log_v[0]), np.exp(log_v[1:d + 1]),
                        np.exp(log_v[d + 1:]), self.prior_loc, self.prior_scale)

    @classmethod
    def default(cls, observations: np.ndarray) -> "RQHypers":
        """Length-scale prior locations from the median pairwise distance
        in each dimension; unit log-normal scales everywhere."""
        obs = np.asarray(observations, dtype=float).reshape(-1, np.shape(observations)[-1])
        obs = obs[np.all(np.isfinite(obs), axis=1)]
        d = obs.shape[1]
        locs = [0.0]
        for i in range(d):
            col = np.unique(obs[:, i])
            if col.shape[0] > 400:
                col = col[:: col.shape[0] // 400]
            if col.shape[0] < 2:
                locs.append(0.0)
                continue
            dist = np.abs(col[:, None] - col[None, :])
            med = float(np.median(dist[dist > 0])) if np.any(dist > 0) else 1.0
            locs.append(math.log(med))
        locs.extend([0.0] * d)
        loc = np.array(locs)
        scale = np.ones(2 * d + 1)
        log_v = loc
        return cls(math.exp(log_v[0]), np.exp(log_v[1:d + 1]), np.exp(log_v[d + 1:]),
                   loc, scale)


def rq_kernel(x: np.ndarray, y: np.ndarray, hypers: RQHypers) -> float:
    """k0^2 * prod_i (1 + (x_i - y_i)^2 / (2 alpha_i l_i^2))^(-alpha_i)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    z = (x - y) ** 2 / (2.0 * hypers.alphas * hypers.lengths ** 2)
    return float(hypers.k0 ** 2 * np.prod((1.0 + z) ** (-hypers.alphas)))


def _gram_1d(knots: np.ndarray, length: float, alpha: float) -> np.ndarray:
    d2 = (knots[:, None] - knots[None, :]) ** 2
    return (1.0 + d2 / (2.0 * alpha * length ** 2)) ** (-alpha)


@dataclass(frozen=True)
class KronFactors:
    """Kronecker-factored square root of the grid Gram matrix.

    K = k0^2 (G_1 x ... x G_d); with per-dimension eigendecompositions
    G_i = U_i diag(w_i) U_i^T (eigenvalues clamped at zero), the square
    root is L = k0 (L_1 x ... x L_d), L_i = U_i diag(sqrt(w_i)). The
    amplitude enters exactly once.
    """

    us: tuple
    eigs: tuple
    k0: float

    @property
    def shape(self) -> tuple:
        return tuple(u.shape[0] for u in self.us)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def l_factors(self) -> tuple:
        return tuple(u * np.sqrt(w)[None, :] for u, w in zip(self.us, self.eigs))

    def eigenvalues(self) -> np.ndarray:
        """All N eigenvalues of K (products across dimensions, C order)."""
        out = np.array([self.k0 ** 2])
        for w in self.eigs:
            out = np.kron(out, w)
        return out


def factorize_knot_arrays(knot_arrays: Sequence[np.ndarray],
                          hypers: RQHypers) -> KronFactors:
    """Per-dimension eigendecompositions for raw knot vectors.

    Unlike CharGrid this accepts repeated knots: the Gram matrices are then
    singular, their zero eigenvalues are clamped, and L still exists.
    """
    if len(knot_arrays) != hypers.n_dims:
        raise InvalidArgumentError(
            f"{len(knot_arrays)} knot vectors for {hypers.n_dims}-dimensional hypers")
    us, eigs = [], []
    for i, knots in enumerate(knot_arrays):
        gram = _gram_1d(np.asarray(knots, dtype=float),
                        float(hypers.lengths[i]), float(hypers.alphas[i]))
        if not np.all(np.isfinite(gram)):
            raise NumericError(f"non-finite Gram entries in dimension {i}")
        w, u = np.linalg.eigh(gram)
        us.append(u)
        eigs.append(np.clip(w, 0.0, None))
    return KronFactors(tuple(us), tuple(eigs), float(hypers.k0))


def kron_factorize(grid: CharGrid, hypers: RQHypers) -> KronFactors:
    if hypers.n_dims != grid.n_dims:
        raise InvalidArgumentError(
            f"hyperparameters are {hypers.n_dims}-dimensional, grid is {grid.n_dims}")
    if grid.size > _MAX_GRID_CELLS:
        raise ResourceError(
            f"grid has {grid.size} cells (limit {_MAX_GRID_CELLS}); coarsen the "
            "per-dimension knot counts")
    return factorize_knot_arrays(grid.knots, hypers)


def kron_matvec(factors: KronFactors, x: np.ndarray) -> np.ndarray:
    """L x without materializing L: per-axis contractions, O(N sum m_i)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (factors.size,):
        raise InvalidArgumentError(f"x has length {x.shape}, expected ({factors.size},)")
    tensor = x.reshape(factors.shape)
    for axis, l_i in enumerate(factors.l_factors):
        tensor = np.moveaxis(np.tensordot(l_i, tensor, axes=([1], [axis])), 0, axis)
    return factors.k0 * tensor.ravel()


# ---------------------------------------------------------------------------
# elliptical slice sampling


def ess_step(current: np.ndarray, log_lik: Callable[[np.ndarray], float],
             prior_draw: Callable[[np.random.Generator], np.ndarray],
             rng: np.random.Generator,
             current_log_lik: float | None = None) -> tuple[np.ndarray, float, int]:
    """One elliptical slice update for a standard-normal-prior parameter.

    Draws an auxiliary prior point, a log threshold under the current
    likelihood, then shrinks an angle bracket until the proposal clears the
    threshold (guaranteed, since angle 0 recovers the current point).
    Returns (new point, its log likelihood, number of proposal likelihood
    evaluations).
    """
    current = np.asarray(current, dtype=float)
    if current_log_lik is None:
        current_log_lik = float(log_lik(current))
    if math.isnan(current_log_lik) or current_log_lik == -math.inf:
        raise NumericError(f"log likelihood {current_log_lik!r} at the current point")
    nu = prior_draw(rng)
    log_y = current_log_lik + math.log(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * math.pi)
    theta_min, theta_max = theta - 2.0 * math.pi, theta
    n_evals = 0
    while True:
        proposal = current * math.cos(theta) + nu * math.sin(theta)
        lp = float(log_lik(proposal))
        n_evals += 1
        if math.isnan(lp):
            raise NumericError("log likelihood is NaN at an elliptical proposal")
        if lp > log_y:
            return proposal, lp, n_evals
        if theta < 0.0:
            theta_min = theta
        else:
            theta_max = theta
        theta = rng.uniform(theta_min, theta_max)


# ---------------------------------------------------------------------------
# grid-map portfolios and the backtest likelihood


def grid_map_targets(log_map: np.ndarray, cell_idx: np.ndarray,
                     member: np.ndarray) -> np.ndarray:
    """Target weights from per-cell log map values: each formation row is a
    softmax of members' cell values."""
    if not np.all(member.any(axis=1)):
        raise InvalidArgumentError("a formation day has no members")
    vals = np.where(member, log_map[cell_idx], -np.inf)
    w = np.exp(vals - vals.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


class _GridBacktestLikelihood:
    """Backtest likelihood of a log map on the grid; precomputes the
    cell index of every (formation day, asset) pair once."""

    def __init__(self, bundle: PanelBundle, char_specs: Sequence[str],
                 grid: CharGrid, lik: GammaLikelihood, config: BacktestConfig,
                 perf: Callable | None):
        chars = build_char_rows(bundle, list(char_specs))
        member = np.vstack([bundle.panel.membership, bundle.panel.membership[-1:]])
        if not np.all(np.isfinite(chars[member])):
            raise DataError(
                "characteristics contain non-finite values for member assets; "
                "the grid map cannot price them")
        safe = np.where(member[..., None], chars, grid.cell_coordinates()[0])
        self.cell_idx = grid.snap(safe)
        self.member = member
        self.panel = bundle.panel
        self.config = config
        self.perf = perf if perf is not None else make_excess_return_perf(bundle, config)
        self.lik = lik

    def performance(self, log_map: np.ndarray) -> float:
        targets = grid_map_targets(log_map, self.cell_idx, self.member)
        return self.perf(run_backtest(targets, self.panel, self.config))

    def __call__(self, log_map: np.ndarray) -> float:
        try:
            return gamma_log_density(self.performance(log_map), self.lik)
        except SptlabError:
            return -math.inf


# ---------------------------------------------------------------------------
# blocked Gibbs sampler


@dataclass(frozen=True)
class GPPosterior:
    """Retained blocked-Gibbs output and per-cell posterior summaries."""

    grid: CharGrid
    char_specs: tuple
    mean_log_map: np.ndarray
    std_log_map: np.ndarray
    retained_x: np.ndarray
    retained_hypers: np.ndarray       # retained centered log-hypers, (R, 2d+1)
    hyper_names: tuple
    prior_loc: np.ndarray
    prior_scale: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_retained(self) -> int:
        return self.retained_x.shape[0]

    def retained_log_hypers(self) -> np.ndarray:
        """Retained hyperparameters on the log scale (uncentered)."""
        return self.prior_loc + self.prior_scale * self.retained_hypers

    def hyper_summary(self) -> dict:
        logs = self.retained_log_hypers()
        return {name: {"log_mean": float(logs[:, j].mean()),
                       "log_std": float(logs[:, j].std(ddof=1))}
                for j, name in enumerate(self.hyper_names)}


def blocked_gibbs(bundle: PanelBundle, char_specs: Sequence[str],
                  grid: CharGrid | None = None,
                  lik: GammaLikelihood = GammaLikelihood(), *,
                  iterations: int = 2_000, burn_in: int = 1_000, seed: int = 0,
                  config: BacktestConfig = BacktestConfig(),
                  hypers: RQHypers | None = None,
                  perf: Callable | None = None,
                  grid_sizes: Sequence[int] | None = None,
                  max_init_tries: int = 50) -> GPPosterior:
    """Sample the investment-map posterior.

    Alternates elliptical slice updates of the whitened map values X (prior
    N(0, I)) and of the centered log hyperparameters (prior N(0, I) after
    centering by the log-normal locations and scales); each hyperparameter
    move rebuilds the Kronecker factors, so it genuinely moves log f = L X
    and hence the likelihood.
    """
    if not (0 <= burn_in < iterations):
        raise InvalidArgumentError("need 0 <= burn_in < iterations")
    chars = build_char_rows(bundle, list(char_specs))
    member = np.vstack([bundle.panel.membership, bundle.panel.membership[-1:]])
    observed = chars[member]
    if grid is None:
        grid = CharGrid.from_observations(observed, grid_sizes)
    if hypers is None:
        hypers = RQHypers.default(observed)
    likelihood = _GridBacktestLikelihood(bundle, char_specs, grid, lik, config, perf)
    rng = np.random.default_rng(seed)
    n = grid.size
    d = grid.n_dims

    factors = kron_factorize(grid, hypers)
    x = np.zeros(n)
    eta = hypers.centered()
    ll = -math.inf
    for _ in range(max_init_tries):
        x = rng.standard_normal(n)
        ll = likelihood(kron_matvec(factors, x))
        if math.isfinite(ll):
            break
    if not math.isfinite(ll):
        raise InitializationError(
            f"no finite-likelihood starting map found in {max_init_tries} prior draws; "
            "the performance likelihood may be non-positive everywhere reachable")

    loglik_trace = np.empty(iterations)
    x_evals = np.zeros(iterations, dtype=int)
    hyper_evals = np.zeros(iterations, dtype=int)
    kept_x = np.empty((iterations - burn_in, n))
    kept_eta = np.empty((iterations - burn_in, 2 * d + 1))
    kept_logf = np.empty((iterations - burn_in, n))

    state = {"factors": factors, "hypers": hypers}

    def x_log_lik(x_prop: np.ndarray) -> float:
        return likelihood(kron_matvec(state["factors"], x_prop))

    def eta_log_lik(eta_prop: np.ndarray) -> float:
        h = state["hypers"].from_centered(eta_prop)
        return likelihood(kron_matvec(kron_factorize(grid, h), x))

    draw_x = lambda r: r.standard_normal(n)
    draw_eta = lambda r: r.standard_normal(2 * d + 1)

    for it in range(iterations):
        x, ll, ne = ess_step(x, x_log_lik, draw_x, rng, current_log_lik=ll)
        x_evals[it] = ne
        eta, ll, ne = ess_step(eta, eta_log_lik, draw_eta, rng, current_log_lik=ll)
        hyper_evals[it] = ne
        new_hypers = state["hypers"].from_centered(eta)
        state["hypers"] = new_hypers
        state["factors"] = kron_factorize(grid, new_hypers)
        loglik_trace[it] = ll
        if it >= burn_in:
            kept_x[it - burn_in] = x
            kept_eta[it - burn_in] = eta
            kept_logf[it - burn_in] = kron_matvec(state["factors"], x)

    return GPPosterior(
        grid=grid, char_specs=tuple(char_specs),
        mean_log_map=kept_logf.mean(axis=0),
        std_log_map=kept_logf.std(axis=0, ddof=1),
        retained_x=kept_x, retained_hypers=kept_eta,
        hyper_names=_hyper_names(d),
        prior_loc=hypers.prior_loc, prior_scale=hypers.prior_scale,
        diagnostics={"loglik_trace": loglik_trace, "x_evals": x_evals,
                     "hyper_evals": hyper_evals, "seed": seed})


def map_lookup(posterior, x: np.ndarray) -> float:
    """Posterior-mean log map at the grid cell nearest to x (piecewise
    constant; out-of-range coordinates clamp to the box)."""
    if posterior.mean_log_map.shape[0] < 1:
        raise InvalidArgumentError("posterior has no retained samples")
    idx = posterior.grid.snap(np.atleast_1d(np.asarray(x, dtype=float)))
    return float(posterior.mean_log_map[int(idx)])


def posterior_targets(bundle: PanelBundle, posterior) -> np.ndarray:
    """Target weights induced by a posterior(-artifact)'s mean log map."""
    chars = build_char_rows(bundle, list(posterior.char_specs))
    member = np.vstack([bundle.panel.membership, bundle.panel.membership[-1:]])
    if not np.all(np.isfinite(chars[member])):
        raise DataError("characteristics contain non-finite values for member assets")
    safe = np.where(member[..., None], chars, posterior.grid.cell_coordinates()[0])
    return grid_map_targets(posterior.mean_log_map, posterior.grid.snap(safe), member)


# ---------------------------------------------------------------------------
# artifacts


@dataclass(frozen=True)
class GPArtifact:
    """The serializable part of a GPPosterior: enough to trade the map."""

    grid: CharGrid
    char_specs: tuple
    mean_log_map: np.ndarray
    std_log_map: np.ndarray
    hyper_summary: dict

    @classmethod
    def from_posterior(cls, posterior: GPPosterior) -> "GPArtifact":
        return cls(posterior.grid, posterior.char_specs, posterior.mean_log_map,
                   posterior.std_log_map, posterior.hyper_summary())


def artifact_to_json(artifact) -> str:
    if isinstance(artifact, GPPosterior):
        artifact = GPArtifact.from_posterior(artifact)
    payload = {
        "kind": "investment_map_posterior",
        "char_specs": list(artifact.char_specs),
        "knots": [g.tolist() for g in artifact.grid.knots],
        "mean_log_map": artifact.mean_log_map.tolist(),
        "std_log_map": artifact.std_log_map.tolist(),
        "hyper_summary": artifact.hyper_summary,
    }
    return json.dumps(payload, indent=2)


def artifact_from_json(text: str) -> GPArtifact:
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as err:
        raise DataError(f"bad posterior artifact: {err}") from None
    try:
        grid = CharGrid(tuple(np.asarray(g, dtype=float) for g in payload["knots"]))
        return GPArtifact(grid, tuple(payload["char_specs"]),
                          np.asarray(payload["mean_log_map"], dtype=float),
                          np.asarray(payload["std_log_map"], dtype=float),
                          dict(payload.get("hyper_summary", {})))
    except (KeyError, TypeError) as err:
        raise DataError(f"posterior artifact is missing fields: {err}") from None


def load_posterior_artifact(path: str) -> GPArtifact:
    with open(path, "r", encoding="utf-8") as fh:
        return artifact_from_json(fh.read())


def map_csv(artifact) -> str:
    """Per-cell map values with the +-2 posterior standard deviation band."""
    if isinstance(artifact, GPPosterior):
        artifact = GPArtifact.from_posterior(artifact)
    coord_names = [spec.replace(":", "_") for spec in artifact.char_specs]
    lines = [",".join(coord_names + ["log_f", "band_lo", "band_hi"])]
    coords = artifact.grid.cell_coordinates()
    mean, std = artifact.mean_log_map, artifact.std_log_map
    for c in range(coords.shape[0]):
        cells = [repr(float(v)) for v in coords[c]]
        lines.append(",".join(cells + [repr(float(mean[c])),
                                       repr(float(mean[c] - 2.0 * std[c])),
                                       repr(float(mean[c] + 2.0 * std[c]))]))
    return "\n".join(lines) + "\n"
