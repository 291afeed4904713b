import json

import numpy as np
import pytest

from convbt.errors import BadConfig, EmptySeries, NotEnoughHistory
from convbt.market_data import AlignedPanel, rebase
from convbt.report import dump_json, result_dict
from convbt.runner import BacktestConfig, hold, max_drawdown, run_grid, run_scenario, sharpe_matrix
from convbt.synth import reference_pipeline

from conftest import synth_panel

SERIES = ("raw", "scaled", "rolling_vol")


def assert_results_equal(a, b):
    for f in SERIES:
        assert np.array_equal(getattr(a.weights, f), getattr(b.weights, f)), f
    for f in ("daily_returns", "cumulative", "pre_scaling_returns", "benchmark_cumulative"):
        assert np.array_equal(getattr(a, f), getattr(b, f)), f
    assert a.metrics == b.metrics and a.pre_scaling_metrics == b.pre_scaling_metrics
    assert a.plan.decisions == b.plan.decisions


def brute_drawdown(c):
    worst = 0.0
    for i in range(len(c)):
        for j in range(i, len(c)):
            worst = min(worst, c[j] - c[i])
    return worst


class TestMaxDrawdown:
    def test_monotone(self):
        assert max_drawdown([0, 1, 2, 3]) == 0.0

    def test_single_dip(self):
        assert max_drawdown([0, 2, 1, 3]) == -1.0

    def test_matches_pairwise(self, rng):
        c = np.cumsum(rng.normal(0, 1, 1000))
        assert max_drawdown(c) == pytest.approx(brute_drawdown(c.tolist()), abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptySeries):
            max_drawdown([])


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [dict(lags=[0]), dict(lags=[]), dict(forecaster_counts=[0]), dict(vol_window=1), dict(vol_target=0.0),
         dict(selection_mode="daily"), dict(forecaster_counts=["most"]), dict(rebalance_every=0)],
    )
    def test_invalid(self, kw):
        with pytest.raises(BadConfig):
            BacktestConfig(**kw)

    def test_defaults(self):
        c = BacktestConfig()
        assert c.lags == [3, 25, 500] and c.forecaster_counts == [10, 20, 30, "all"]
        assert c.vol_target == 0.01 and c.annualization == 252 and c.initial_capital == 1_000_000


class TestRunScenario:
    def test_zero_target_returns(self):
        p = synth_panel(seed=3, assets=4, days=120)
        prices = p.prices.copy()
        prices[:, 0] = 50.0
        flat = rebase(AlignedPanel(p.dates, p.tickers, prices, 0))
        res = run_scenario(flat, BacktestConfig(), 3, 2)
        assert np.all(res.daily_returns == 0) and np.all(res.cumulative == 0)
        assert res.metrics.sharpe == 0.0 and res.metrics.sharpe_degenerate
        assert res.benchmark.sharpe_degenerate

    def test_single_asset_rising_target(self):
        p = synth_panel(seed=3, assets=1, days=200, drift=0.001, vol=0.0)
        rp = rebase(p)
        res = run_scenario(rp, BacktestConfig(), 3, 1)
        assert np.all(res.weights.raw[1:] == 1.0)
        assert res.plan.decisions == ((("A00", False),),)
        # raw weight is known only from the first close after inception, so the
        # unscaled strategy misses exactly the first target return
        reb = rp.rebased[:, 0]
        np.testing.assert_allclose(res.pre_scaling_cumulative[1:], reb[1:] - reb[1], rtol=0, atol=1e-12)

    def test_matches_reference(self, panel5):
        res = run_scenario(rebase(panel5), BacktestConfig(), 3, 2)
        ref = reference_pipeline(panel5, BacktestConfig(), 3, 2)
        for f in SERIES:
            np.testing.assert_allclose(getattr(res.weights, f), getattr(ref.weights, f), rtol=0, atol=1e-12)
        np.testing.assert_allclose(res.cumulative, ref.cumulative, rtol=0, atol=1e-12)
        assert res.plan.decisions == ref.plan.decisions

    def test_result_invariants(self, rpanel5):
        for mode in ("in_sample", "walk_forward"):
            res = run_scenario(rpanel5, BacktestConfig(selection_mode=mode), 2, 3)
            T = len(rpanel5.dates)
            assert res.cumulative.shape == (T,) and res.weights.scaled.shape == (T,)
            np.testing.assert_allclose(res.cumulative, np.cumsum(res.daily_returns), rtol=0, atol=1e-12)
            dd = np.min(res.cumulative - np.maximum.accumulate(res.cumulative))
            assert res.metrics.max_drawdown == dd <= 0
            assert np.all(np.abs(res.weights.raw) <= 1)
            assert np.all(np.abs(res.weights.scaled) <= 10)
            assert res.daily_returns[0] == 0 and res.weights.scaled[0] == 0

    def test_benchmark_identity(self, rpanel5):
        res = run_scenario(rpanel5, BacktestConfig(), 3, 2)
        target = rpanel5.rebased[:, rpanel5.target_index]
        assert np.array_equal(1.0 + res.benchmark_cumulative, target)
        np.testing.assert_allclose(res.benchmark_cumulative, target - 1.0, rtol=0, atol=1e-15)

    def test_hold_constant_long_is_buy_and_hold(self, rpanel5):
        daily = hold(np.ones(len(rpanel5.dates)), rpanel5.target_returns)
        assert np.array_equal(1.0 + np.cumsum(daily), rpanel5.rebased[:, rpanel5.target_index])

    def test_n_clamped(self, rpanel5):
        res = run_scenario(rpanel5, BacktestConfig(), 3, 42)
        assert res.scenario.clamped and res.scenario.n_effective == 5
        assert not run_scenario(rpanel5, BacktestConfig(), 3, "all").scenario.clamped

    def test_single_shift(self, panel5):
        cfg = BacktestConfig(selection_mode="walk_forward", rebalance_every=10)
        base = run_scenario(rebase(panel5), cfg, 3, 2)
        for t in (5, 60, 200):
            prices = panel5.prices.copy()
            prices[t + 1 :, panel5.target_index] *= 1.3  # changes the return into t+1 only
            res = run_scenario(rebase(AlignedPanel(panel5.dates, panel5.tickers, prices, 0)), cfg, 3, 2)
            for f in SERIES:
                assert np.array_equal(getattr(res.weights, f)[: t + 1], getattr(base.weights, f)[: t + 1])

    def test_capital_stays_positive(self):
        for seed in range(5):
            res = run_scenario(rebase(synth_panel(seed=seed, assets=6, days=400, vol=0.015)), BacktestConfig(), 3, 3)
            assert np.all(res.equity > 0)

    def test_deterministic_serialization(self, panel5):
        a = dump_json(result_dict(run_scenario(rebase(panel5), BacktestConfig(), 25, 3)))
        b = dump_json(result_dict(run_scenario(rebase(panel5), BacktestConfig(), 25, 3)))
        assert a == b
        assert "NaN" not in a and "Infinity" not in a
        json.loads(a)

    def test_errors(self, panel5):
        short = rebase(AlignedPanel(panel5.dates[:2], panel5.tickers, panel5.prices[:2], 0))
        with pytest.raises(NotEnoughHistory):
            run_scenario(short, BacktestConfig(), 3, 2)
        with pytest.raises(BadConfig):
            run_scenario(rebase(panel5), BacktestConfig(), 0, 2)
        with pytest.raises(BadConfig):
            run_scenario(rebase(panel5), BacktestConfig(), 3, 0)


class TestGrid:
    def test_singleton(self, rpanel5):
        cfg = BacktestConfig(lags=[3], forecaster_counts=[1])
        (only,) = run_grid(rpanel5, cfg)
        assert_results_equal(only, run_scenario(rpanel5, cfg, 3, 1))

    def test_matrix_matches_cells(self, rpanel5):
        cfg = BacktestConfig(lags=[3, 25], forecaster_counts=[2, 4])
        results = run_grid(rpanel5, cfg)
        assert [(r.scenario.lag, r.scenario.n_requested) for r in results] == [(3, 2), (3, 4), (25, 2), (25, 4)]
        matrix = sharpe_matrix(results)
        for lag in (3, 25):
            for n in (2, 4):
                assert matrix[lag][str(n)] == run_scenario(rpanel5, cfg, lag, n).metrics.sharpe

    def test_parallel_identical(self, rpanel5):
        cfg = BacktestConfig(lags=[2, 3, 25], forecaster_counts=[1, 3, "all"], selection_mode="walk_forward")
        for a, b in zip(run_grid(rpanel5, cfg), run_grid(rpanel5, cfg, max_workers=4)):
            assert_results_equal(a, b)
