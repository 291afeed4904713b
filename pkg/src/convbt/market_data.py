"""Price ingestion, calendar alignment and unit-base rebasing.

Input files are UTF-8 CSV in one of two layouts:

* long: header containing ``date``, ``ticker`` and ``close`` columns, one
  row per (date, ticker);
* wide: ``date,<ticker1>,<ticker2>,...`` with empty cells meaning "no
  observation".

Dates are ISO-8601 calendar days without timezone. Decimal separator is
always ``.``.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from typing import Literal, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateDate,
    InsufficientOverlap,
    MalformedRow,
    NonPositivePrice,
    PanelInvariantError,
    TargetMissing,
    UnknownTicker,
)

logger = logging.getLogger(__name__)

FillPolicy = Literal["inner_join", "forward_fill"]


@dataclass(frozen=True)
class CsvSchema:
    """Column mapping for :func:`parse_price_csv`.

    ``layout="auto"`` picks long when the header holds all three long-format
    column names, wide otherwise.
    """

    layout: Literal["long", "wide", "auto"] = "auto"
    date: str = "date"
    ticker: str = "ticker"
    close: str = "close"


@dataclass(frozen=True)
class RawPriceSeries:
    ticker: str
    dates: tuple[date, ...]
    closes: np.ndarray

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=float)
        object.__setattr__(self, "closes", closes)
        if closes.ndim != 1 or len(closes) != len(self.dates):
            raise PanelInvariantError(f"{self.ticker}: dates and closes differ in length")
        for prev, cur in zip(self.dates, self.dates[1:]):
            if cur == prev:
                raise DuplicateDate(self.ticker, cur)
            if cur < prev:
                raise PanelInvariantError(f"{self.ticker}: dates not increasing at {cur}")
        for d, c in zip(self.dates, closes):
            if not c > 0:
                raise NonPositivePrice(self.ticker, d)

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class AlignedPanel:
    """Rectangular T x M close-price matrix on a shared calendar.

    ``drop_counts`` records, per ticker, how many candidate dates were
    discarded because that ticker had no usable price on them.
    """

    dates: tuple[date, ...]
    tickers: tuple[str, ...]
    prices: np.ndarray
    target_index: int
    drop_counts: dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float)
        object.__setattr__(self, "prices", prices)
        object.__setattr__(self, "dates", tuple(self.dates))
        object.__setattr__(self, "tickers", tuple(self.tickers))
        if prices.ndim != 2 or prices.shape != (len(self.dates), len(self.tickers)):
            raise PanelInvariantError(
                f"price matrix shape {prices.shape} does not match "
                f"{len(self.dates)} dates x {len(self.tickers)} tickers"
            )
        if len(set(self.tickers)) != len(self.tickers):
            raise PanelInvariantError("duplicate tickers in panel")
        if not 0 <= self.target_index < len(self.tickers):
            raise PanelInvariantError(f"target_index {self.target_index} out of range")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise PanelInvariantError("panel dates must be strictly increasing")
        if not np.all(np.isfinite(prices)) or not np.all(prices > 0):
            raise PanelInvariantError("panel prices must be finite and strictly positive")

    @property
    def target(self) -> str:
        return self.tickers[self.target_index]

    def column(self, ticker: str) -> int:
        try:
            return self.tickers.index(ticker)
        except ValueError:
            raise UnknownTicker(f"unknown ticker {ticker!r}") from None


@dataclass(frozen=True)
class RebasedPanel:
    """Unit-base cumulative log-return transform of an :class:`AlignedPanel`.

    ``returns[k, j]`` is the log return of asset ``j`` from ``dates[k]`` to
    ``dates[k + 1]``; ``rebased[t, j] = 1 + sum(returns[:t, j])``.
    """

    dates: tuple[date, ...]
    tickers: tuple[str, ...]
    target_index: int
    rebased: np.ndarray
    returns: np.ndarray

    @property
    def target(self) -> str:
        return self.tickers[self.target_index]

    @property
    def n_returns(self) -> int:
        return self.returns.shape[0]

    @property
    def target_returns(self) -> np.ndarray:
        return self.returns[:, self.target_index]

    def column(self, ticker: str) -> int:
        try:
            return self.tickers.index(ticker)
        except ValueError:
            raise UnknownTicker(f"unknown ticker {ticker!r}") from None


# --------------------------------------------------------------------------
# parsing


def _parse_date(text: str, row: int) -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError:
        raise MalformedRow(row, f"bad ISO-8601 date {text!r}") from None


def _parse_close(text: str, row: int) -> float:
    s = text.strip()
    try:
        value = float(s)
    except ValueError:
        raise MalformedRow(row, f"bad close value {text!r}") from None
    if math.isnan(value) or math.isinf(value):
        raise MalformedRow(row, f"non-finite close value {text!r}")
    return value


def _decode(data: bytes | str) -> str:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise MalformedRow(0, f"input is not UTF-8: {exc}") from None
    return data


def parse_price_csv(data: bytes | str, schema: CsvSchema | None = None) -> list[RawPriceSeries]:
    """Parse long- or wide-format CSV text into one series per ticker.

    Row numbers in errors are 1-based file lines (the header is line 1).
    Series come back sorted by ticker, each sorted by date.
    """
    schema = schema or CsvSchema()
    reader = csv.reader(io.StringIO(_decode(data), newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise MalformedRow(1, "empty file, header row expected") from None

    layout = schema.layout
    if layout == "auto":
        long_cols = {schema.date, schema.ticker, schema.close}
        layout = "long" if long_cols.issubset(header) else "wide"

    obs: dict[str, dict[date, float]] = defaultdict(dict)
    if layout == "long":
        try:
            i_date = header.index(schema.date)
            i_tick = header.index(schema.ticker)
            i_close = header.index(schema.close)
        except ValueError:
            raise MalformedRow(
                1, f"header must contain {schema.date!r}, {schema.ticker!r}, {schema.close!r}"
            ) from None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(lineno, f"expected {len(header)} fields, got {len(row)}")
            ticker = row[i_tick].strip()
            if not ticker:
                raise MalformedRow(lineno, "empty ticker")
            if not row[i_close].strip():
                raise MalformedRow(lineno, "empty close (only allowed in wide layout)")
            d = _parse_date(row[i_date], lineno)
            close = _parse_close(row[i_close], lineno)
            if not close > 0:
                raise NonPositivePrice(ticker, d)
            if d in obs[ticker]:
                raise DuplicateDate(ticker, d)
            obs[ticker][d] = close
    elif layout == "wide":
        if not header or header[0] != schema.date:
            raise MalformedRow(1, f"wide layout needs {schema.date!r} as first column")
        tickers = header[1:]
        if not tickers or any(not t for t in tickers) or len(set(tickers)) != len(tickers):
            raise MalformedRow(1, "wide header needs distinct, non-empty ticker names")
        for t in tickers:
            obs[t]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise MalformedRow(lineno, f"expected {len(header)} fields, got {len(row)}")
            d = _parse_date(row[0], lineno)
            for ticker, cell in zip(tickers, row[1:]):
                if not cell.strip():
                    continue
                close = _parse_close(cell, lineno)
                if not close > 0:
                    raise NonPositivePrice(ticker, d)
                if d in obs[ticker]:
                    raise DuplicateDate(ticker, d)
                obs[ticker][d] = close
    else:
        raise ValueError(f"unknown layout {layout!r}")

    out = []
    for ticker in sorted(obs):
        items = sorted(obs[ticker].items())
        out.append(
            RawPriceSeries(ticker, tuple(d for d, _ in items), np.array([c for _, c in items], dtype=float))
        )
    return out


# --------------------------------------------------------------------------
# alignment


def align_panel(
    series: Sequence[RawPriceSeries],
    target: str,
    fill_policy: FillPolicy = "inner_join",
    max_gap: int | None = None,
) -> AlignedPanel:
    """Put every series on a common calendar.

    ``inner_join`` keeps the dates present in every series. ``forward_fill``
    starts from the union of dates and carries a ticker's last close forward
    when its most recent real observation is at most ``max_gap`` calendar
    days old; dates that cannot be filled are dropped and counted against
    the offending ticker.
    """
    if not series:
        raise InsufficientOverlap("no price series supplied")
    tickers = [s.ticker for s in series]
    if len(set(tickers)) != len(tickers):
        raise DataError("duplicate ticker among input series")
    if target not in tickers:
        raise TargetMissing(f"target {target!r} not among {sorted(tickers)}")

    lookup = [dict(zip(s.dates, s.closes.tolist())) for s in series]
    drops = {t: 0 for t in tickers}
    all_dates = sorted(set().union(*(s.dates for s in series)))

    if fill_policy == "inner_join":
        keep = []
        for d in all_dates:
            missing = [t for t, obs in zip(tickers, lookup) if d not in obs]
            for t in missing:
                drops[t] += 1
            if not missing:
                keep.append(d)
        rows = [[obs[d] for obs in lookup] for d in keep]
    elif fill_policy == "forward_fill":
        if max_gap is None or max_gap < 0:
            raise DataError("forward_fill requires max_gap >= 0 days")
        last: list[tuple[date, float] | None] = [None] * len(series)
        keep, rows = [], []
        for d in all_dates:
            row, failed = [], []
            for j, obs in enumerate(lookup):
                if d in obs:
                    last[j] = (d, obs[d])
                    row.append(obs[d])
                elif last[j] is not None and (d - last[j][0]).days <= max_gap:
                    row.append(last[j][1])
                else:
                    failed.append(tickers[j])
            for t in failed:
                drops[t] += 1
            if not failed:
                keep.append(d)
                rows.append(row)
    else:
        raise DataError(f"unknown fill policy {fill_policy!r}")

    if len(keep) < 2:
        raise InsufficientOverlap(f"only {len(keep)} common date(s) after {fill_policy}")
    dropped = {t: n for t, n in drops.items() if n}
    if dropped:
        logger.info("alignment dropped dates: %s", dropped)
    return AlignedPanel(
        dates=tuple(keep),
        tickers=tuple(tickers),
        prices=np.array(rows, dtype=float),
        target_index=tickers.index(target),
        drop_counts=drops,
    )


def rebase(panel: AlignedPanel) -> RebasedPanel:
    """Log returns and the ``1 + cumulative log return`` price index."""
    p = panel.prices
    returns = np.log(p[1:] / p[:-1])
    rebased = np.empty_like(p)
    rebased[0] = 1.0
    rebased[1:] = 1.0 + np.cumsum(returns, axis=0)
    return RebasedPanel(
        dates=panel.dates,
        tickers=panel.tickers,
        target_index=panel.target_index,
        rebased=rebased,
        returns=returns,
    )


# --------------------------------------------------------------------------
# writing


def panel_to_wide_csv(panel: AlignedPanel) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", *panel.tickers])
    for d, row in zip(panel.dates, panel.prices.tolist()):
        w.writerow([d.isoformat(), *(repr(x) for x in row)])
    return buf.getvalue()


def panel_to_long_csv(panel: AlignedPanel) -> str:
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["date", "ticker", "close"])
    for d, row in zip(panel.dates, panel.prices.tolist()):
        for t, x in zip(panel.tickers, row):
            w.writerow([d.isoformat(), t, repr(x)])
    return buf.getvalue()


def series_from_panel(panel: AlignedPanel) -> list[RawPriceSeries]:
    return [RawPriceSeries(t, panel.dates, panel.prices[:, j].copy()) for j, t in enumerate(panel.tickers)]


def load_panel(
    data: bytes | str,
    target: str,
    fill_policy: FillPolicy = "inner_join",
    max_gap: int | None = None,
    schema: CsvSchema | None = None,
) -> AlignedPanel:
    """Parse and align in one step."""
    return align_panel(parse_price_csv(data, schema), target, fill_policy, max_gap)


def panel_digest_bytes(panel: AlignedPanel | RebasedPanel) -> bytes:
    """Canonical byte form of a panel's content, used for input hashing."""
    if isinstance(panel, RebasedPanel):
        raise TypeError("digest is defined on the aligned price panel")
    return panel_to_wide_csv(panel).encode("utf-8") + f"target={panel.target}\n".encode()

