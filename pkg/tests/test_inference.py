"""Exponent learners: grid search and random-walk Metropolis-Hastings.

The Gamma parameterization is checked against scipy's gamma distribution
and a numerical mode maximizer; the sampler against closed-form moments of
simple targets; the grid search against planted panels with known tilt.
"""

import math

import numpy as np
import pytest
from scipy import optimize, stats

from sptlab.backtest import BacktestConfig
from sptlab.errors import (
    DomainError,
    InitializationError,
    InvalidArgumentError,
    NoFeasiblePointError,
)
from sptlab.inference import (
    ExponentChain,
    GammaLikelihood,
    _dwp_perf_evaluator,
    gamma_log_density,
    grid_search_dwp,
    make_excess_return_perf,
    make_sharpe_perf,
    mh_sample_dwp,
    random_walk_mh,
)
from sptlab.strategies import ewp_targets
from sptlab.backtest import run_backtest
from sptlab.synthetic import gbm_bundle, planted_premium_bundle


@pytest.fixture(scope="module")
def flat_bundle():
    # zero drift, zero vol, equal caps: every return is exactly zero
    return gbm_bundle(n=4, years=1.0, seed=0, drift=0.0, vol=0.0, cap_spread=1.0)


@pytest.fixture(scope="module")
def tilted_bundle():
    return planted_premium_bundle(n=5, years=2.0, seed=7)


class TestGammaParameterization:
    @pytest.mark.parametrize("a,b", [(7.0, 0.5), (1.0, 1.0), (0.3, 2.5)])
    def test_mean_std_round_trip(self, a, b):
        lik = GammaLikelihood(a, b)
        k, theta = lik.shape, lik.scale
        assert abs(k * theta - a) <= 1e-12 * a
        assert abs(math.sqrt(k) * theta - b) <= 1e-12 * b

    def test_matches_scipy_distribution(self):
        lik = GammaLikelihood(7.0, 0.5)
        dist = stats.gamma(lik.shape, scale=lik.scale)
        assert abs(dist.mean() - 7.0) <= 1e-12
        assert abs(dist.std() - 0.5) <= 1e-12
        for x in (0.5, 3.0, 6.5, 7.0, 9.0):
            np.testing.assert_allclose(
                gamma_log_density(x, lik), dist.logpdf(x), rtol=1e-12)

    def test_density_vanishes_off_support(self):
        lik = GammaLikelihood(7.0, 0.5)
        assert gamma_log_density(0.0, lik) == -math.inf
        assert gamma_log_density(-1.0, lik) == -math.inf

    def test_mode_closed_form_and_numerical(self):
        # mode of Gamma(k, theta) is (k - 1) theta = a - b^2 / a
        lik = GammaLikelihood(7.0, 0.5)
        mode = 7.0 - 0.5 ** 2 / 7.0
        assert abs(mode - 195.0 / 28.0) <= 1e-15
        res = optimize.minimize_scalar(
            lambda x: -gamma_log_density(x, lik), bounds=(5.0, 9.0),
            method="bounded", options={"xatol": 1e-10})
        assert abs(res.x - mode) <= 1e-6

    def test_parameter_validation(self):
        with pytest.raises(InvalidArgumentError):
            GammaLikelihood(0.0, 0.5)
        with pytest.raises(InvalidArgumentError):
            GammaLikelihood(7.0, -1.0)


class TestPerfFunctionals:
    def test_excess_return_of_benchmark_is_zero(self, tilted_bundle):
        cfg = BacktestConfig()
        perf = make_excess_return_perf(tilted_bundle, cfg)
        series = run_backtest(ewp_targets(tilted_bundle), tilted_bundle.panel, cfg)
        assert perf(series) == 0.0

    def test_sharpe_perf_wraps_sharpe_ratio(self, tilted_bundle):
        cfg = BacktestConfig()
        perf = make_sharpe_perf(cfg)
        series = run_backtest(ewp_targets(tilted_bundle), tilted_bundle.panel, cfg)
        from sptlab.backtest import sharpe_ratio
        assert perf(series) == sharpe_ratio(series.portfolio_returns, 252)

    def test_evaluator_memoizes_nearby_exponents(self, tilted_bundle):
        calls = {"n": 0}

        def perf(series):
            calls["n"] += 1
            return series.terminal_wealth

        evaluate = _dwp_perf_evaluator(tilted_bundle, perf, BacktestConfig())
        v1 = evaluate(0.5)
        v2 = evaluate(0.5)
        v3 = evaluate(0.5 + 1e-10)  # below the memo quantum
        assert calls["n"] == 1
        assert v1 == v2 == v3
        evaluate(0.6)
        assert calls["n"] == 2


class TestGridSearch:
    def test_planted_premium_prefers_negative_exponent(self, tilted_bundle):
        res = grid_search_dwp(tilted_bundle, lo=-4.0, hi=4.0, mesh=0.5)
        assert res.p_star < 0
        assert res.summary()["best_value"] > 0
        # excess of the p = 0 point is the benchmark against itself
        idx = int(np.argmin(np.abs(res.grid)))
        assert res.values[idx] == 0.0

    def test_default_grid_has_321_points(self, flat_bundle):
        res = grid_search_dwp(flat_bundle)
        assert res.grid.shape == (321,)
        assert abs(res.grid[0] + 8.0) <= 1e-12
        assert abs(res.grid[-1] - 8.0) <= 1e-12

    def test_all_ties_resolve_to_smallest_magnitude(self, flat_bundle):
        # flat panel: every exponent earns exactly zero excess
        res = grid_search_dwp(flat_bundle, lo=-1.0, hi=1.0, mesh=0.5)
        assert np.all(res.values == 0.0)
        assert res.p_star == 0.0

    def test_magnitude_tie_breaks_toward_lower_exponent(self, flat_bundle):
        res = grid_search_dwp(flat_bundle, lo=-0.75, hi=0.75, mesh=0.5)
        np.testing.assert_allclose(res.grid, [-0.75, -0.25, 0.25, 0.75], atol=1e-12)
        assert res.p_star == -0.25

    def test_failed_points_are_skipped_and_reported(self, tilted_bundle):
        cfg = BacktestConfig()
        clean = grid_search_dwp(tilted_bundle, lo=-4.0, hi=4.0, mesh=0.5,
                                config=cfg)
        threshold = float(np.nanmedian(clean.values))
        base = make_excess_return_perf(tilted_bundle, cfg)

        def perf(series):
            v = base(series)
            if v < threshold:
                raise DomainError("performance below reporting threshold")
            return v

        res = grid_search_dwp(tilted_bundle, perf=perf, lo=-4.0, hi=4.0,
                              mesh=0.5, config=cfg)
        assert res.p_star == clean.p_star
        assert len(res.skipped) > 0
        assert np.isnan(res.values[np.isin(res.grid, [p for p, _ in res.skipped])]).all()
        summ = res.summary()
        assert summ["evaluated"] + len(summ["skipped"]) == summ["grid_points"]
        assert all("threshold" in item["reason"] for item in summ["skipped"])

    def test_no_feasible_point(self, flat_bundle):
        # sharpe is undefined on identically-zero returns at every exponent
        with pytest.raises(NoFeasiblePointError):
            grid_search_dwp(flat_bundle, perf=make_sharpe_perf(), lo=-1.0,
                            hi=1.0, mesh=0.5)

    def test_parameter_validation(self, flat_bundle):
        with pytest.raises(InvalidArgumentError):
            grid_search_dwp(flat_bundle, mesh=0.0)
        with pytest.raises(InvalidArgumentError):
            grid_search_dwp(flat_bundle, lo=2.0, hi=-2.0)


class TestRandomWalkMH:
    def test_flat_target_moments(self):
        # flat density on [-8, 8]: mean 0, variance 64/3
        rng = np.random.default_rng(101)
        samples, logliks, accepted = random_walk_mh(
            lambda x: 0.0, 0.0, 20_000, 5.0, (-8.0, 8.0), rng)
        assert np.all(samples >= -8.0) and np.all(samples <= 8.0)
        assert np.all(logliks == 0.0)
        assert abs(samples.mean()) < 0.3
        assert abs(samples.var() - 64.0 / 3.0) / (64.0 / 3.0) < 0.1

    def test_flat_target_histogram_close_to_uniform(self):
        rng = np.random.default_rng(103)
        samples, _, _ = random_walk_mh(
            lambda x: 0.0, 0.0, 20_000, 5.0, (-8.0, 8.0), rng)
        counts, _ = np.histogram(samples, bins=8, range=(-8.0, 8.0))
        np.testing.assert_allclose(counts, 2500, rtol=0.2)

    def test_gaussian_target_moments(self):
        rng = np.random.default_rng(107)
        samples, _, _ = random_walk_mh(
            lambda x: -0.5 * x * x, 0.0, 20_000, 2.5, (-8.0, 8.0), rng)
        assert abs(samples.mean()) < 0.1
        assert abs(samples.std() - 1.0) < 0.1

    def test_tiny_steps_always_accept_under_flat_target(self):
        rng = np.random.default_rng(109)
        _, _, accepted = random_walk_mh(
            lambda x: 0.0, 0.0, 500, 0.01, (-8.0, 8.0), rng)
        assert np.all(accepted)

    def test_out_of_bounds_proposals_rejected_in_place(self):
        rng = np.random.default_rng(113)
        samples, _, accepted = random_walk_mh(
            lambda x: 0.0, 7.9, 2_000, 3.0, (-8.0, 8.0), rng)
        assert np.all(samples <= 8.0)
        assert not np.all(accepted)  # some proposals must have left [lo, hi]

    def test_non_finite_start_raises(self):
        rng = np.random.default_rng(127)
        with pytest.raises(InitializationError):
            random_walk_mh(lambda x: -math.inf, 0.0, 10, 0.5, (-8.0, 8.0), rng)

    def test_nan_target_raises(self):
        rng = np.random.default_rng(131)
        with pytest.raises(InvalidArgumentError):
            random_walk_mh(lambda x: float("nan") if x > 0.5 else 0.0,
                           0.0, 1_000, 1.0, (-8.0, 8.0), rng)


class TestExponentChain:
    def _chain(self):
        samples = np.array([0.0, 1.0, 1.0, 3.0, 5.0, 2.0])
        logliks = np.zeros(6)
        accepted = np.array([0, 1, 0, 1, 1, 1], dtype=bool)
        return ExponentChain(samples, logliks, accepted, burn_in=2,
                             proposal_std=0.5, bounds=(-8.0, 8.0),
                             initial_p=0.0, seed=4)

    def test_retained_statistics(self):
        chain = self._chain()
        np.testing.assert_array_equal(chain.retained, [1.0, 3.0, 5.0, 2.0])
        assert chain.posterior_mean == np.mean([1.0, 3.0, 5.0, 2.0])
        assert chain.posterior_std == np.std([1.0, 3.0, 5.0, 2.0], ddof=1)
        assert chain.acceptance_rate == 0.75

    def test_csv_format(self):
        text = self._chain().to_csv()
        lines = text.strip().splitlines()
        assert lines[0] == "iter,p,log_lik,accepted"
        assert len(lines) == 7
        cells = lines[4].split(",")
        assert int(cells[0]) == 3
        assert float(cells[1]) == 3.0
        assert cells[3] == "1"

    def test_summary_keys(self):
        summ = self._chain().summary()
        assert summ["iterations"] == 6
        assert summ["burn_in"] == 2
        assert summ["bounds"] == [-8.0, 8.0]
        assert summ["seed"] == 4

    def test_out_of_bound_samples_rejected(self):
        with pytest.raises(InvalidArgumentError):
            ExponentChain(np.array([0.0, 9.0]), np.zeros(2),
                          np.zeros(2, dtype=bool), burn_in=0, proposal_std=0.5,
                          bounds=(-8.0, 8.0), initial_p=0.0, seed=0)


class TestMhSampleDwp:
    def test_runs_and_is_reproducible(self, tilted_bundle):
        kwargs = dict(perf=lambda s: s.terminal_wealth,
                      lik=GammaLikelihood(1.0, 0.5), iterations=300,
                      burn_in=100, proposal_std=1.0, initial_p=-1.0, seed=5)
        a = mh_sample_dwp(tilted_bundle, **kwargs)
        b = mh_sample_dwp(tilted_bundle, **kwargs)
        np.testing.assert_array_equal(a.samples, b.samples)
        assert a.retained.shape == (200,)
        assert 0.0 < a.acceptance_rate <= 1.0
        c = mh_sample_dwp(tilted_bundle, **{**kwargs, "seed": 6})
        assert not np.array_equal(a.samples, c.samples)

    def test_zero_performance_start_raises_initialization(self, tilted_bundle):
        # default perf is excess over EWP, which is exactly zero at p = 0
        with pytest.raises(InitializationError, match="positive performance"):
            mh_sample_dwp(tilted_bundle, iterations=50, burn_in=10,
                          initial_p=0.0)

    def test_parameter_validation(self, tilted_bundle):
        with pytest.raises(InvalidArgumentError):
            mh_sample_dwp(tilted_bundle, lo=8.0, hi=-8.0)
        with pytest.raises(InvalidArgumentError):
            mh_sample_dwp(tilted_bundle, initial_p=9.0)
        with pytest.raises(InvalidArgumentError):
            mh_sample_dwp(tilted_bundle, iterations=10, burn_in=10)
        with pytest.raises(InvalidArgumentError):
            mh_sample_dwp(tilted_bundle, proposal_std=0.0)
