"""Scenario and grid orchestration.

Everything a :class:`StrategyResult` exposes is aligned to the panel's
``T`` dates. Row ``t`` holds the weights decided at the close of
``dates[t]`` and the return realized from ``dates[t-1]`` to ``dates[t]``;
row 0 is the inception row (no return, no position except for the
buy-and-hold benchmark, which is long from the start).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import date
from itertools import product
from typing import Sequence, Union

import numpy as np

from .errors import BadConfig, EmptySeries, LengthMismatch, NotEnoughHistory, ZeroVolatility
from .market_data import RebasedPanel
from .selection import (
    SelectionMode,
    SelectionPlan,
    WeightSeries,
    combine_equal_weight,
    select_forecasters,
    sharpe_ratio,
    vol_target,
)
from .signals import all_sign_signals, forecaster_track, shifted_returns

logger = logging.getLogger(__name__)

Count = Union[int, str]
ALL = "all"


@dataclass
class BacktestConfig:
    lags: list[int] = field(default_factory=lambda: [3, 25, 500])
    forecaster_counts: list[Count] = field(default_factory=lambda: [10, 20, 30, ALL])
    vol_window: int = 60
    vol_target: float = 0.01
    leverage_cap: float = 10.0
    vol_floor: float = 1e-6
    selection_mode: SelectionMode = "in_sample"
    rebalance_every: int = 21
    annualization: float = 252
    initial_capital: float = 1_000_000.0
    target_ticker: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> "BacktestConfig":
        if not self.lags or any(not _is_pos_int(x) for x in self.lags):
            raise BadConfig(f"lags must be a non-empty list of positive integers, got {self.lags!r}")
        if not self.forecaster_counts or any(
            not (_is_pos_int(x) or x == ALL) for x in self.forecaster_counts
        ):
            raise BadConfig(
                f"forecaster_counts must be positive integers or {ALL!r}, got {self.forecaster_counts!r}"
            )
        if not _is_pos_int(self.vol_window) or self.vol_window < 2:
            raise BadConfig(f"vol_window must be an integer >= 2, got {self.vol_window!r}")
        for name in ("vol_target", "leverage_cap", "vol_floor", "annualization", "initial_capital"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or math.isinf(value):
                raise BadConfig(f"{name} must be a positive finite number, got {value!r}")
        if self.selection_mode not in ("in_sample", "walk_forward"):
            raise BadConfig(f"selection_mode must be in_sample or walk_forward, got {self.selection_mode!r}")
        if not _is_pos_int(self.rebalance_every):
            raise BadConfig(f"rebalance_every must be a positive integer, got {self.rebalance_every!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _is_pos_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x >= 1


@dataclass(frozen=True)
class Scenario:
    lag: int
    n_requested: Count
    n_effective: int
    selection_mode: SelectionMode
    clamped: bool = False

    @property
    def label(self) -> str:
        return f"L{self.lag}_N{self.n_requested}_{self.selection_mode}"


@dataclass(frozen=True)
class Metrics:
    sharpe: float
    sharpe_degenerate: bool
    annualized_return: float
    annualized_vol: float
    max_drawdown: float


@dataclass(frozen=True)
class StrategyResult:
    scenario: Scenario
    dates: tuple[date, ...]
    weights: WeightSeries
    pre_scaling_returns: np.ndarray
    pre_scaling_cumulative: np.ndarray
    daily_returns: np.ndarray
    cumulative: np.ndarray
    benchmark_returns: np.ndarray
    benchmark_cumulative: np.ndarray
    metrics: Metrics
    pre_scaling_metrics: Metrics
    benchmark: Metrics
    plan: SelectionPlan
    initial_capital: float = 1_000_000.0

    @property
    def equity(self) -> np.ndarray:
        """Portfolio value; cumulative log return applied additively to capital."""
        return self.initial_capital * (1.0 + self.cumulative)


def max_drawdown(cumulative: Sequence[float] | np.ndarray) -> float:
    """Most negative gap between the series and its running maximum."""
    c = np.asarray(cumulative, dtype=float)
    if c.size == 0:
        raise EmptySeries("max_drawdown of an empty series")
    return float(np.min(c - np.maximum.accumulate(c))) + 0.0


def hold(positions: np.ndarray, target_returns: np.ndarray) -> np.ndarray:
    """Date-grid returns of holding ``positions[t-1]`` over ``(t-1, t]``.

    ``positions`` has one entry per date, ``target_returns`` one per
    return; the output has one entry per date with a zero at row 0.
    """
    p = np.asarray(positions, dtype=float)
    r = np.asarray(target_returns, dtype=float)
    if p.shape != (r.size + 1,):
        raise LengthMismatch(f"{p.size} positions for {r.size} returns")
    out = np.zeros(p.size)
    out[1:] = p[:-1] * r
    return out


def compute_metrics(daily: np.ndarray, cumulative: np.ndarray, annualization: float = 252) -> Metrics:
    """Metrics over the realized returns (rows 1..T-1) of a date-grid series."""
    realized = np.asarray(daily, dtype=float)[1:]
    try:
        sharpe, degenerate = sharpe_ratio(realized, annualization), False
    except ZeroVolatility:
        sharpe, degenerate = 0.0, True
    vol = float(realized.std(ddof=1) * math.sqrt(annualization)) if realized.size > 1 else 0.0
    return Metrics(
        sharpe=sharpe,
        sharpe_degenerate=degenerate,
        annualized_return=float(realized.mean() * annualization) + 0.0,
        annualized_vol=vol,
        max_drawdown=max_drawdown(cumulative),
    )


def resolve_count(n: Count, n_assets: int) -> tuple[int, bool]:
    """Map a requested forecaster count to ``(effective, clamped)``."""
    if n == ALL:
        return n_assets, False
    if not _is_pos_int(n):
        raise BadConfig(f"forecaster count must be a positive integer or {ALL!r}, got {n!r}")
    if n > n_assets:
        return n_assets, True
    return n, False


def _on_dates(x: np.ndarray) -> np.ndarray:
    return np.concatenate(([0.0], x)) + 0.0


def run_scenario(panel: RebasedPanel, config: BacktestConfig, lag: int, n: Count) -> StrategyResult:
    """Signals, tracks, selection, combination and vol targeting for one (lag, N)."""
    config.validate()
    if not _is_pos_int(lag):
        raise BadConfig(f"lag must be a positive integer, got {lag!r}")
    if panel.n_returns < 2:
        raise NotEnoughHistory("a scenario needs at least three dates (two returns)")
    m = len(panel.tickers)
    n_eff, clamped = resolve_count(n, m)
    if clamped:
        logger.warning("N=%s exceeds %d assets; using all assets", n, m)

    r = panel.target_returns
    signals = all_sign_signals(panel, lag)
    tracks = [forecaster_track(s, panel) for s in signals]
    plan = select_forecasters(
        tracks, n_eff, config.selection_mode, config.rebalance_every, config.annualization
    )
    raw = combine_equal_weight(signals, plan)
    ws = vol_target(
        raw,
        shifted_returns(raw, r),
        window=config.vol_window,
        target=config.vol_target,
        cap=config.leverage_cap,
        floor=config.vol_floor,
        annualization=config.annualization,
    )
    weights = WeightSeries(_on_dates(ws.raw), _on_dates(ws.scaled), _on_dates(ws.rolling_vol))

    pre = hold(weights.raw, r)
    daily = hold(weights.scaled, r)
    bench = hold(np.ones(len(panel.dates)), r)
    pre_cum, cum, bench_cum = np.cumsum(pre), np.cumsum(daily), np.cumsum(bench)

    a = config.annualization
    return StrategyResult(
        scenario=Scenario(lag, n, n_eff, config.selection_mode, clamped),
        dates=panel.dates,
        weights=weights,
        pre_scaling_returns=pre,
        pre_scaling_cumulative=pre_cum,
        daily_returns=daily,
        cumulative=cum,
        benchmark_returns=bench,
        benchmark_cumulative=bench_cum,
        metrics=compute_metrics(daily, cum, a),
        pre_scaling_metrics=compute_metrics(pre, pre_cum, a),
        benchmark=compute_metrics(bench, bench_cum, a),
        plan=plan,
        initial_capital=config.initial_capital,
    )


def run_grid(panel: RebasedPanel, config: BacktestConfig, max_workers: int | None = None) -> list[StrategyResult]:
    """All (lag, N) cells, row-major over lags then counts.

    With ``max_workers > 1`` cells run on a thread pool; output order and
    values do not depend on scheduling.
    """
    config.validate()
    cells = list(product(config.lags, config.forecaster_counts))
    if max_workers and max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(lambda c: run_scenario(panel, config, *c), cells))
    return [run_scenario(panel, config, lag, n) for lag, n in cells]


def sharpe_matrix(results: Sequence[StrategyResult], pre_scaling: bool = False) -> dict[int, dict[str, float]]:
    """``{lag: {count_label: sharpe}}`` in grid order."""
    out: dict[int, dict[str, float]] = {}
    for res in results:
        m = res.pre_scaling_metrics if pre_scaling else res.metrics
        out.setdefault(res.scenario.lag, {})[str(res.scenario.n_requested)] = m.sharpe
    return out
