"""Sharpe scoring, absolute-Sharpe forecaster selection and vol targeting."""

from __future__ import annotations

import logging
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import BadConfig, LengthMismatch, NotEnoughHistory, UnknownTicker, ZeroVolatility
from .signals import ForecasterTrack, SignalSeries

logger = logging.getLogger(__name__)

SelectionMode = Literal["in_sample", "walk_forward"]
TRADING_DAYS = 252


@dataclass(frozen=True)
class SharpeScore:
    ticker: str
    sharpe: float
    degenerate: bool = False

    @property
    def flip(self) -> bool:
        return self.sharpe < 0


@dataclass(frozen=True)
class SelectionPlan:
    """Which forecasters are held, and with what sign, at each decision.

    ``decisions[i]`` takes effect at return index ``decision_indices[i]``
    and stays in force until the next decision. Before the first decision
    nothing is held.
    """

    mode: SelectionMode
    rebalance_every: int | None
    decision_indices: tuple[int, ...]
    decisions: tuple[tuple[tuple[str, bool], ...], ...]
    scores: tuple[tuple[SharpeScore, ...], ...] = ()

    def active(self, k: int) -> tuple[tuple[str, bool], ...] | None:
        i = bisect_right(self.decision_indices, k) - 1
        return self.decisions[i] if i >= 0 else None

    def segments(self, length: int):
        """Yield ``(start, stop, chosen)`` covering ``[first decision, length)``."""
        bounds = [*self.decision_indices, length]
        for i, chosen in enumerate(self.decisions):
            start, stop = bounds[i], min(bounds[i + 1], length)
            if start < stop:
                yield start, stop, chosen


@dataclass(frozen=True)
class WeightSeries:
    raw: np.ndarray
    scaled: np.ndarray
    rolling_vol: np.ndarray


def sharpe_ratio(daily_returns: Sequence[float] | np.ndarray, annualization: float = TRADING_DAYS) -> float:
    """Annualized Sharpe ratio with zero risk-free rate and sample std.

    Raises :class:`ZeroVolatility` when every observation is identical.
    """
    x = np.asarray(daily_returns, dtype=float)
    if x.size < 2:
        raise NotEnoughHistory("Sharpe ratio needs at least two observations")
    if x.max() == x.min():
        raise ZeroVolatility("constant return series")
    sd = x.std(ddof=1)
    if sd == 0.0:
        raise ZeroVolatility("zero sample standard deviation")
    return float(x.mean() / sd * math.sqrt(annualization))


def score(daily: np.ndarray, ticker: str, annualization: float = TRADING_DAYS) -> SharpeScore:
    try:
        return SharpeScore(ticker, sharpe_ratio(daily, annualization))
    except ZeroVolatility:
        return SharpeScore(ticker, 0.0, degenerate=True)


def rank(scores: Sequence[SharpeScore], n: int) -> tuple[tuple[str, bool], ...]:
    """Top ``n`` by absolute Sharpe; ties by ticker; degenerate scores last."""
    ordered = sorted(scores, key=lambda s: (s.degenerate, -abs(s.sharpe), s.ticker))
    return tuple((s.ticker, s.flip) for s in ordered[:n])


def select_forecasters(
    tracks: Sequence[ForecasterTrack],
    n: int,
    mode: SelectionMode = "in_sample",
    rebalance_every: int = 21,
    annualization: float = TRADING_DAYS,
) -> SelectionPlan:
    """Pick ``n`` forecasters by absolute Sharpe, flipping negative ones.

    ``in_sample`` ranks once on the full history. ``walk_forward`` re-ranks
    every ``rebalance_every`` return days using only track returns up to and
    including the decision day, starting at the first day with two
    observations.
    """
    if n < 1:
        raise BadConfig(f"number of forecasters must be >= 1, got {n}")
    if not tracks:
        raise NotEnoughHistory("no forecaster tracks to select from")
    length = len(tracks[0])
    if any(len(t) != length for t in tracks):
        raise LengthMismatch("forecaster tracks differ in length")
    if len({t.ticker for t in tracks}) != len(tracks):
        raise BadConfig("duplicate tickers among forecaster tracks")
    n = min(n, len(tracks))

    if mode == "in_sample":
        if length < 2:
            raise NotEnoughHistory("in-sample selection needs at least two track observations")
        scores = tuple(score(t.daily, t.ticker, annualization) for t in tracks)
        return SelectionPlan(mode, None, (0,), (rank(scores, n),), (scores,))

    if mode == "walk_forward":
        if rebalance_every < 1:
            raise BadConfig(f"rebalance_every must be >= 1, got {rebalance_every}")
        if length < 2:
            raise NotEnoughHistory("walk-forward selection needs at least two track observations")
        indices = tuple(range(1, length, rebalance_every))
        decisions, all_scores = [], []
        for k in indices:
            scores = tuple(score(t.daily[: k + 1], t.ticker, annualization) for t in tracks)
            decisions.append(rank(scores, n))
            all_scores.append(scores)
        return SelectionPlan(mode, rebalance_every, indices, tuple(decisions), tuple(all_scores))

    raise BadConfig(f"unknown selection mode {mode!r}")


def combine_equal_weight(signals: Sequence[SignalSeries], plan: SelectionPlan) -> np.ndarray:
    """Equal-weight average of the selected, sign-adjusted signals.

    Days before the plan's first decision get a zero weight.
    """
    if not signals:
        raise LengthMismatch("no signals to combine")
    length = len(signals[0])
    if any(len(s) != length for s in signals):
        raise LengthMismatch("signals differ in length")
    by_ticker = {s.ticker: s.values for s in signals}
    out = np.zeros(length)
    for start, stop, chosen in plan.segments(length):
        acc = np.zeros(stop - start)
        for ticker, flip in chosen:
            if ticker not in by_ticker:
                raise UnknownTicker(f"plan references unknown ticker {ticker!r}")
            v = by_ticker[ticker][start:stop]
            acc += -v if flip else v
        out[start:stop] = acc / len(chosen)
    return out


def rolling_annualized_vol(
    returns: np.ndarray, window: int, annualization: float = TRADING_DAYS
) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window sample std scaled by ``sqrt(annualization)``.

    Returns ``(vol, estimable)``; ``vol`` is 0 where fewer than two
    observations are available.
    """
    r = np.asarray(returns, dtype=float)
    vol = np.zeros_like(r)
    ok = np.zeros(r.shape, dtype=bool)
    root = math.sqrt(annualization)
    for k in range(1, r.size):
        vol[k] = root * r[max(0, k - window + 1) : k + 1].std(ddof=1)
        ok[k] = True
    return vol, ok


def vol_target(
    raw_weights: Sequence[float] | np.ndarray,
    strategy_daily_returns: Sequence[float] | np.ndarray,
    window: int = 60,
    target: float = 0.01,
    cap: float = 10.0,
    floor: float = 1e-6,
    annualization: float = TRADING_DAYS,
) -> WeightSeries:
    """Scale weights so the strategy runs at ``target`` annualized vol.

    The divisor is the trailing ``window``-day vol of the unscaled strategy
    returns, floored at ``floor``; the result is clipped to ``[-cap, cap]``.
    Weights stay flat until two returns are available.
    """
    raw = np.asarray(raw_weights, dtype=float)
    r = np.asarray(strategy_daily_returns, dtype=float)
    if raw.shape != r.shape or raw.ndim != 1:
        raise LengthMismatch(f"raw weights {raw.shape} and returns {r.shape} differ")
    if window < 2:
        raise BadConfig(f"vol window must be >= 2, got {window}")
    for name, value in (("target", target), ("cap", cap), ("floor", floor)):
        if not value > 0:
            raise BadConfig(f"vol {name} must be positive, got {value}")
    vol, ok = rolling_annualized_vol(r, window, annualization)
    scaled = np.where(ok, raw * target / np.maximum(vol, floor), 0.0)
    scaled = np.clip(scaled, -cap, cap)
    return WeightSeries(raw=raw.copy(), scaled=scaled, rolling_vol=vol)
