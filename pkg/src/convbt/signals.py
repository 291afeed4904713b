"""EMA sign forecasters and the per-asset PnL tracks they produce.

All series here live on the *return index*: position ``k`` refers to the
log return from ``dates[k]`` to ``dates[k + 1]``, which is known at the
close of ``dates[k + 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptySeries, LengthMismatch
from .market_data import RebasedPanel


@dataclass(frozen=True)
class SignalSeries:
    ticker: str
    lag: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise ValueError("signal values must be one-dimensional")
        if not np.isin(values, (-1.0, 0.0, 1.0)).all():
            raise ValueError("signal values must be -1, 0 or +1")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    def __neg__(self) -> "SignalSeries":
        return SignalSeries(self.ticker, self.lag, -self.values + 0.0)


@dataclass(frozen=True)
class ForecasterTrack:
    """Cumulative PnL from trading the target with one asset's signal.

    ``daily[k] = signal[k - 1] * target_return[k]`` and ``daily[0] = 0``.
    """

    ticker: str
    lag: int
    daily: np.ndarray
    pnl: np.ndarray

    def __len__(self) -> int:
        return len(self.daily)


def ema(series: Sequence[float] | np.ndarray, lag: int) -> np.ndarray:
    """Exponential moving average with span ``lag``.

    Uses ``alpha = 2 / (lag + 1)`` and seeds the recursion with the first
    observation, so the output has the same length as the input and no
    burn-in is discarded.

    >>> ema([0.0, 0.0, 1.0, 1.0], 3).tolist()
    [0.0, 0.0, 0.5, 0.75]
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise EmptySeries("ema needs a non-empty one-dimensional series")
    if int(lag) != lag or lag < 1:
        raise ValueError(f"lag must be a positive integer, got {lag!r}")
    alpha = 2.0 / (lag + 1.0)
    # incremental form keeps constant input an exact fixed point
    out = x.tolist()
    prev = out[0]
    for t in range(1, len(out)):
        prev = prev + alpha * (out[t] - prev)
        out[t] = prev
    return np.array(out)


def sign_signal(panel: RebasedPanel, asset: str, lag: int) -> SignalSeries:
    """``sign(ema(returns of asset, lag))`` with ``sign(0) = 0``."""
    j = panel.column(asset)
    smoothed = ema(panel.returns[:, j], lag)
    return SignalSeries(asset, lag, np.sign(smoothed) + 0.0)


def all_sign_signals(panel: RebasedPanel, lag: int) -> list[SignalSeries]:
    return [sign_signal(panel, t, lag) for t in panel.tickers]


def discrete_convolution(f: Sequence[float] | np.ndarray, g: Sequence[float] | np.ndarray) -> np.ndarray:
    """Full linear convolution, ``out[k] = sum_j f[j] * g[k - j]``.

    Direct O(n*m) form. Operands are put in a canonical order first so that
    ``conv(f, g)`` and ``conv(g, f)`` run the same floating-point operations
    and agree bit for bit.
    """
    a = np.asarray(f, dtype=float).ravel()
    b = np.asarray(g, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise EmptySeries("convolution operands must be non-empty")
    if (b.size, tuple(b.tolist())) > (a.size, tuple(a.tolist())):
        a, b = b, a
    n, m = a.size, b.size
    out = np.zeros(n + m - 1)
    for i in range(m):
        out[i : i + n] += b[i] * a
    return out


def forecaster_track(signal: SignalSeries, panel: RebasedPanel) -> ForecasterTrack:
    """Shift the signal one day, multiply by target returns, accumulate."""
    r = panel.target_returns
    if len(signal) != len(r):
        raise LengthMismatch(f"signal length {len(signal)} != return length {len(r)}")
    daily = np.zeros_like(r)
    daily[1:] = signal.values[:-1] * r[1:]
    return ForecasterTrack(signal.ticker, signal.lag, daily, np.cumsum(daily))


def shifted_returns(weights: np.ndarray, target_returns: np.ndarray) -> np.ndarray:
    """Per-day return of holding yesterday's weight: ``w[k-1] * r[k]``, 0 at k=0."""
    w = np.asarray(weights, dtype=float)
    r = np.asarray(target_returns, dtype=float)
    if w.shape != r.shape:
        raise LengthMismatch(f"weights {w.shape} and returns {r.shape} differ")
    out = np.zeros_like(r)
    out[1:] = w[:-1] * r[1:]
    return out
