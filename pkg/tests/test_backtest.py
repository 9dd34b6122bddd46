"""Wealth accounting under proportional costs.

The vectorized backtester is checked against a plain scalar loop written
independently here, against hand-computed single-day numbers, and against
the closed-form zero-cost product formula.
"""

import math
import statistics

import numpy as np
import pytest

from sptlab.backtest import (
    BacktestConfig,
    ReturnsPanel,
    annualize_return,
    excess_return,
    run_backtest,
    sharpe_ratio,
)
from sptlab.errors import (
    DataError,
    DomainError,
    InvalidArgumentError,
    MembershipError,
    NotLongOnlyError,
    UndefinedSharpeError,
)


def make_panel(r, dates=None, membership=None, asset_ids=()):
    r = np.asarray(r, dtype=float)
    if dates is None:
        dates = np.array([f"2000-D{k:03d}" for k in range(r.shape[0])])
    return ReturnsPanel(dates=np.asarray(dates), r=r,
                        membership=membership, asset_ids=asset_ids)


def scalar_backtest(targets, r, tc, membership=None, v0=1.0, charge_init=False):
    """Straight-line reimplementation of the accounting recursion."""
    T = len(r)
    n = len(r[0])
    if membership is None:
        membership = [[True] * n for _ in range(T)]
    v = v0
    if charge_init:
        v = v - tc * sum(abs(x) for x in targets[0]) * v
    wealth = [v]
    rets, tos, costs = [], [], []
    for t in range(T):
        eff = [r[t][i] if membership[t][i] else 0.0 for i in range(n)]
        ret = sum(targets[t][i] * eff[i] for i in range(n))
        q = 1.0 + ret
        if q <= 0.0:
            to = 0.0
        else:
            drifted = [targets[t][i] * (1.0 + eff[i]) / q for i in range(n)]
            to = sum(abs(targets[t + 1][i] - drifted[i]) for i in range(n))
        new_v = v * q * (1.0 - tc * to)
        rets.append(ret)
        tos.append(to)
        costs.append(v * q - new_v)
        v = new_v
        wealth.append(v)
        if v <= 0.0:
            break
    return wealth, rets, tos, costs


class TestHandExample:
    def test_single_split_day(self):
        # hold (0.5, 0.5) through returns (+10%, -10%): flat portfolio
        # return, weights drift to (0.55, 0.45), rebalancing back trades
        # 0.10 of wealth and costs one basis point of 0.10
        panel = make_panel([[0.10, -0.10]])
        targets = np.array([[0.5, 0.5], [0.5, 0.5]])
        series = run_backtest(targets, panel, BacktestConfig(tc_rate=0.001))
        assert series.portfolio_returns[0] == 0.0
        assert abs(series.turnover[0] - 0.10) <= 1e-15
        assert abs(series.costs[0] - 1e-4) <= 1e-15
        assert abs(series.terminal_wealth - 0.9999) <= 1e-15

    def test_single_split_day_matches_scalar_loop(self):
        panel = make_panel([[0.10, -0.10]])
        targets = [[0.5, 0.5], [0.5, 0.5]]
        series = run_backtest(np.array(targets), panel,
                              BacktestConfig(tc_rate=0.001))
        wealth, rets, tos, costs = scalar_backtest(targets, [[0.10, -0.10]], 0.001)
        assert series.terminal_wealth == wealth[-1]
        assert series.turnover[0] == tos[0]
        assert series.costs[0] == costs[0]


class TestAgainstScalarLoop:
    def test_random_panels(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            T = int(rng.integers(2, 40))
            n = int(rng.integers(2, 6))
            r = rng.normal(0.0005, 0.02, size=(T, n))
            targets = rng.dirichlet(np.ones(n), size=T + 1)
            panel = make_panel(r)
            series = run_backtest(targets, panel, BacktestConfig(tc_rate=0.002))
            wealth, rets, tos, costs = scalar_backtest(
                targets.tolist(), r.tolist(), 0.002)
            np.testing.assert_allclose(series.V, wealth, rtol=1e-12)
            np.testing.assert_allclose(series.portfolio_returns, rets, rtol=1e-10,
                                       atol=1e-15)
            np.testing.assert_allclose(series.turnover, tos, rtol=1e-10, atol=1e-15)
            np.testing.assert_allclose(series.costs, costs, rtol=1e-9, atol=1e-18)

    def test_partial_membership_panel(self):
        rng = np.random.default_rng(43)
        T, n = 30, 4
        r = rng.normal(0.0, 0.02, size=(T, n))
        member = rng.random(size=(T, n)) > 0.2
        member[:, 0] = True  # keep one always-tradable asset
        # weights only on member assets
        targets = np.zeros((T + 1, n))
        member_ext = np.vstack([member, member[-1:]])
        for k in range(T + 1):
            live = np.flatnonzero(member_ext[k])
            w = rng.dirichlet(np.ones(live.size))
            targets[k, live] = w
        panel = make_panel(r, membership=member)
        series = run_backtest(targets, panel, BacktestConfig(tc_rate=0.001))
        wealth, _, tos, _ = scalar_backtest(
            targets.tolist(), r.tolist(), 0.001, membership=member.tolist())
        np.testing.assert_allclose(series.V, wealth, rtol=1e-12)
        np.testing.assert_allclose(series.turnover, tos, rtol=1e-10, atol=1e-15)


class TestZeroCostIdentities:
    def test_terminal_wealth_is_product_formula(self):
        rng = np.random.default_rng(47)
        for _ in range(10):
            T = int(rng.integers(2, 60))
            n = int(rng.integers(2, 8))
            r = rng.normal(0.0, 0.02, size=(T, n))
            targets = rng.dirichlet(np.ones(n), size=T + 1)
            panel = make_panel(r)
            series = run_backtest(targets, panel, BacktestConfig(tc_rate=0.0))
            product = float(np.prod(1.0 + np.sum(targets[:-1] * r, axis=1)))
            np.testing.assert_allclose(series.terminal_wealth, product, rtol=1e-12)
            assert np.all(series.costs == 0.0)

    def test_recursion_identity_exact(self):
        rng = np.random.default_rng(53)
        r = rng.normal(0.0, 0.02, size=(25, 3))
        targets = rng.dirichlet(np.ones(3), size=26)
        series = run_backtest(targets, make_panel(r), BacktestConfig(tc_rate=0.003))
        lhs = series.V[1:]
        rhs = series.V[:-1] * (1.0 + series.portfolio_returns) - series.costs
        np.testing.assert_array_equal(lhs, rhs)

    def test_drift_mirroring_targets_pay_nothing(self):
        # targets that exactly track the drifted weights never trade
        rng = np.random.default_rng(59)
        T, n = 40, 5
        r = rng.normal(0.0, 0.02, size=(T, n))
        targets = np.empty((T + 1, n))
        targets[0] = np.full(n, 1.0 / n)
        for t in range(T):
            q = 1.0 + np.einsum("n,n->", targets[t], r[t])
            targets[t + 1] = targets[t] * (1.0 + r[t]) / q
        series = run_backtest(targets, make_panel(r), BacktestConfig(tc_rate=0.01))
        assert np.all(series.turnover == 0.0)
        assert np.all(series.costs == 0.0)


class TestEdgeBehaviour:
    def test_callable_strategy_matches_array(self):
        rng = np.random.default_rng(61)
        r = rng.normal(0.0, 0.02, size=(10, 3))
        targets = rng.dirichlet(np.ones(3), size=11)
        panel = make_panel(r)
        a = run_backtest(targets, panel)
        b = run_backtest(lambda k: targets[k], panel)
        np.testing.assert_array_equal(a.V, b.V)

    def test_membership_violation_names_date_and_asset(self):
        member = np.array([[True, False], [True, True]])
        panel = make_panel([[0.01, 0.0], [0.0, 0.01]], membership=member,
                           asset_ids=("AAA", "BBB"))
        targets = np.array([[0.5, 0.5]] * 3)
        with pytest.raises(MembershipError) as exc:
            run_backtest(targets, panel)
        msg = str(exc.value)
        assert "2000-D000" in msg and "BBB" in msg

    def test_non_member_returns_are_ignored(self):
        member = np.array([[True, False]])
        r = np.array([[0.02, np.nan]])  # junk outside the universe is fine
        panel = make_panel(r, membership=member)
        targets = np.array([[1.0, 0.0], [1.0, 0.0]])
        series = run_backtest(targets, panel, BacktestConfig(tc_rate=0.0))
        assert abs(series.terminal_wealth - 1.02) <= 1e-15

    def test_total_loss_day_truncates_and_flags_bankrupt(self):
        panel = make_panel([[-1.0], [0.5], [0.5]])
        targets = np.ones((4, 1))
        series = run_backtest(targets, panel)
        assert series.bankrupt
        assert series.V.shape == (2,)
        assert series.terminal_wealth == 0.0
        assert series.turnover[-1] == 0.0 and series.costs[-1] == 0.0
        assert series.dates.shape == (1,)

    def test_member_return_of_minus_one_is_valid_data(self):
        panel = make_panel([[-1.0, 0.01]])
        assert panel.r[0, 0] == -1.0
        with pytest.raises(DataError):
            make_panel([[-1.0001, 0.01]])

    def test_initial_acquisition_charge(self):
        panel = make_panel([[0.0, 0.0]])
        targets = np.array([[0.5, 0.5]] * 2)
        cfg = BacktestConfig(tc_rate=0.01, charge_initial_acquisition=True)
        series = run_backtest(targets, panel, cfg)
        assert series.V[0] == 0.99
        free = run_backtest(targets, panel, BacktestConfig(tc_rate=0.01))
        assert free.V[0] == 1.0

    def test_strategy_shape_and_simplex_validation(self):
        panel = make_panel([[0.0, 0.0]])
        with pytest.raises(InvalidArgumentError):
            run_backtest(np.full((3, 2), 0.5), panel)  # too many rows
        with pytest.raises(NotLongOnlyError):
            run_backtest(np.array([[1.5, -0.5]] * 2), panel)
        with pytest.raises(InvalidArgumentError):
            run_backtest(np.array([[0.7, 0.3 + 2e-8]] * 2), panel)
        # sums within 1e-8 are accepted
        run_backtest(np.array([[0.7, 0.3 + 5e-9]] * 2), panel)

    def test_empty_panel_rejected(self):
        panel = make_panel(np.empty((0, 2)))
        with pytest.raises(InvalidArgumentError):
            run_backtest(np.full((1, 2), 0.5), panel)


class TestPanelValidation:
    def test_date_ordering_enforced(self):
        with pytest.raises(DataError):
            make_panel([[0.0], [0.0]], dates=["2000-D001", "2000-D001"])
        with pytest.raises(DataError):
            make_panel([[0.0], [0.0]], dates=["2000-D002", "2000-D001"])

    def test_shape_mismatches(self):
        with pytest.raises(DataError):
            make_panel(np.zeros(3))
        with pytest.raises(DataError):
            make_panel([[0.0]], dates=["2000-D001", "2000-D002"])
        with pytest.raises(DataError):
            ReturnsPanel(dates=np.array(["2000-D001"]), r=np.zeros((1, 2)),
                         membership=np.ones((2, 2), dtype=bool))
        with pytest.raises(DataError):
            make_panel([[0.0, 0.0]], asset_ids=("only_one",))

    def test_member_returns_must_be_finite(self):
        with pytest.raises(DataError):
            make_panel([[np.inf, 0.0]])

    def test_window_and_properties(self):
        panel = make_panel(np.arange(8, dtype=float).reshape(4, 2) / 100.0)
        assert panel.n_days == 4 and panel.n_assets == 2
        sub = panel.window(1, 3)
        assert sub.n_days == 2
        np.testing.assert_array_equal(sub.r, panel.r[1:3])
        assert sub.asset_ids == panel.asset_ids

    def test_csv_round_trip_bitwise(self):
        rng = np.random.default_rng(67)
        r = rng.normal(0.0, 0.02, size=(5, 3))
        member = rng.random(size=(5, 3)) > 0.3
        r[~member] = 0.0
        panel = make_panel(r, membership=member, asset_ids=("a", "b", "c"))
        back = ReturnsPanel.from_csv(panel.to_csv())
        np.testing.assert_array_equal(back.r, panel.r)
        np.testing.assert_array_equal(back.membership, panel.membership)
        np.testing.assert_array_equal(back.dates, panel.dates)
        assert back.asset_ids == panel.asset_ids


class TestWealthSeriesOutput:
    def test_csv_fields_round_trip(self):
        rng = np.random.default_rng(71)
        r = rng.normal(0.0, 0.02, size=(6, 3))
        targets = rng.dirichlet(np.ones(3), size=7)
        series = run_backtest(targets, make_panel(r))
        lines = series.to_csv().strip().splitlines()
        assert lines[0] == "date,wealth,return,turnover,cost"
        assert len(lines) == 7
        cells = lines[3].split(",")
        assert float(cells[1]) == series.V[3]
        assert float(cells[2]) == series.portfolio_returns[2]
        assert float(cells[3]) == series.turnover[2]
        assert float(cells[4]) == series.costs[2]


class TestPerformanceMetrics:
    def test_sharpe_frozen_example(self):
        rets = [0.01, 0.02, -0.005, 0.015]
        got = sharpe_ratio(rets, periods_per_year=252)
        assert abs(got - 14.696938456699066) <= 1e-9
        # independent route through the stdlib statistics module
        want = math.sqrt(252) * statistics.mean(rets) / statistics.stdev(rets)
        np.testing.assert_allclose(got, want, rtol=1e-12)

    def test_sharpe_scaling_with_periods(self):
        rets = [0.01, 0.02, -0.005, 0.015]
        a = sharpe_ratio(rets, periods_per_year=252)
        b = sharpe_ratio(rets, periods_per_year=63)
        np.testing.assert_allclose(a / b, 2.0, rtol=1e-12)

    def test_sharpe_undefined_cases(self):
        with pytest.raises(UndefinedSharpeError):
            sharpe_ratio([0.01, 0.01, 0.01])
        with pytest.raises(InvalidArgumentError):
            sharpe_ratio([0.01])

    def test_excess_return_is_terminal_wealth_difference(self):
        rng = np.random.default_rng(73)
        r = rng.normal(0.0, 0.02, size=(20, 3))
        panel = make_panel(r)
        a = rng.dirichlet(np.ones(3), size=21)
        b = rng.dirichlet(np.ones(3), size=21)
        cfg = BacktestConfig(tc_rate=0.001)
        diff = excess_return(a, b, panel, cfg)
        va = run_backtest(a, panel, cfg).terminal_wealth
        vb = run_backtest(b, panel, cfg).terminal_wealth
        assert diff == va - vb
        assert excess_return(b, a, panel, cfg) == -(diff)

    def test_annualize_return(self):
        panel = make_panel(np.full((504, 1), (1.21) ** (1 / 504) - 1))
        series = run_backtest(np.ones((505, 1)), panel, BacktestConfig(tc_rate=0.0))
        got = annualize_return(series, periods_per_year=252)
        assert abs(got - 0.10000000000000009) <= 1e-10

    def test_annualize_rejects_bankrupt_series(self):
        series = run_backtest(np.ones((2, 1)), make_panel([[-1.0]]))
        with pytest.raises(DomainError):
            annualize_return(series)


class TestConfigValidation:
    def test_bounds(self):
        with pytest.raises(InvalidArgumentError):
            BacktestConfig(tc_rate=-0.001)
        with pytest.raises(InvalidArgumentError):
            BacktestConfig(periods_per_year=0)
        with pytest.raises(InvalidArgumentError):
            BacktestConfig(initial_wealth=0.0)
