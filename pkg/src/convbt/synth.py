"""Seeded synthetic panels and a loop-based reference pipeline.

Random numbers come from an in-repo generator so that panels are
reproducible bit for bit on any platform:

* seeding: the 64-bit seed is expanded into four state words with
  SplitMix64;
* uniforms: xoshiro256** output ``>> 11``, times ``2**-53``, giving a
  double in ``[0, 1)``;
* normals: Marsaglia's polar method on ``2u - 1`` pairs, returning the
  first variate and caching the second.

For each return day the common factor is drawn first, then one
idiosyncratic shock per asset in column order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date, timedelta
from importlib import resources
from typing import Any, Mapping

import numpy as np
import yaml

from .errors import BadConfig, BadSpec, NotEnoughHistory
from .market_data import AlignedPanel

MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One SplitMix64 step: returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** with SplitMix64 seeding and a polar-method normal sampler."""

    def __init__(self, seed: int):
        sm = int(seed) & MASK64
        self.s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            self.s.append(out)
        self._spare: float | None = None

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        while True:
            u = 2.0 * self.random() - 1.0
            v = 2.0 * self.random() - 1.0
            s = u * u + v * v
            if 0.0 < s < 1.0:
                break
        f = math.sqrt(-2.0 * math.log(s) / s)
        self._spare = v * f
        return u * f


@dataclass(frozen=True)
class Regime:
    length: int
    drift: tuple[float, ...]
    vol: tuple[float, ...]


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    assets: int
    days: int
    regimes: tuple[Regime, ...]
    loading: float = 0.0
    target_index: int = 0
    tickers: tuple[str, ...] = ()
    start: date = date(2000, 1, 3)

    def __post_init__(self):
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise BadSpec("seed must be an integer")
        if self.assets < 1 or self.days < 2:
            raise BadSpec("need at least one asset and two days")
        if not self.regimes or sum(r.length for r in self.regimes) != self.days - 1:
            raise BadSpec(f"regime lengths must sum to days - 1 = {self.days - 1}")
        for r in self.regimes:
            if r.length < 1:
                raise BadSpec("regime lengths must be positive")
            if len(r.drift) != self.assets or len(r.vol) != self.assets:
                raise BadSpec("regime drift/vol need one value per asset")
            if any(v < 0 or not math.isfinite(v) for v in r.vol) or not all(map(math.isfinite, r.drift)):
                raise BadSpec("vols must be finite and >= 0, drifts finite")
        if not abs(self.loading) < 1:
            raise BadSpec("factor loading must satisfy |loading| < 1")
        if not 0 <= self.target_index < self.assets:
            raise BadSpec("target_index out of range")
        if self.tickers and (len(self.tickers) != self.assets or len(set(self.tickers)) != self.assets):
            raise BadSpec("tickers must be distinct, one per asset")

    @property
    def ticker_names(self) -> tuple[str, ...]:
        return self.tickers or tuple(f"A{j:02d}" for j in range(self.assets))

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SynthSpec":
        """Build from plain data; scalar drift/vol broadcast across assets."""
        known = {"seed", "assets", "days", "regimes", "loading", "target_index", "tickers", "start"}
        extra = set(d) - known
        if extra:
            raise BadSpec(f"unknown synth spec keys: {sorted(extra)}")
        try:
            m = int(d["assets"])
            regimes = []
            for r in d["regimes"]:
                drift, vol = r.get("drift", 0.0), r.get("vol", 0.0)
                drift = [float(drift)] * m if np.isscalar(drift) else [float(x) for x in drift]
                vol = [float(vol)] * m if np.isscalar(vol) else [float(x) for x in vol]
                regimes.append(Regime(int(r["length"]), tuple(drift), tuple(vol)))
            start = d.get("start", date(2000, 1, 3))
            if isinstance(start, str):
                start = date.fromisoformat(start)
            return cls(
                seed=int(d["seed"]),
                assets=m,
                days=int(d["days"]),
                regimes=tuple(regimes),
                loading=float(d.get("loading", 0.0)),
                target_index=int(d.get("target_index", 0)),
                tickers=tuple(d.get("tickers") or ()),
                start=start,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadSpec(f"invalid synth spec: {exc}") from None


def business_days(start: date, count: int) -> tuple[date, ...]:
    out, d = [], start
    while len(out) < count:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return tuple(out)


def generate_returns(spec: SynthSpec) -> np.ndarray:
    """``(days - 1) x assets`` log returns following the documented draw order."""
    rng = Xoshiro256(spec.seed)
    idio = math.sqrt(1.0 - spec.loading * spec.loading)
    out = np.empty((spec.days - 1, spec.assets))
    k = 0
    for regime in spec.regimes:
        for _ in range(regime.length):
            common = rng.normal()
            for j in range(spec.assets):
                shock = spec.loading * common + idio * rng.normal()
                out[k, j] = regime.drift[j] + regime.vol[j] * shock
            k += 1
    return out


def generate_panel(spec: SynthSpec) -> AlignedPanel:
    r = generate_returns(spec)
    log_level = np.zeros((spec.days, spec.assets))
    log_level[1:] = np.cumsum(r, axis=0)
    # math.exp rather than np.exp: numpy may dispatch to SIMD kernels whose
    # last-bit rounding differs between CPUs
    prices = [[100.0 * math.exp(x) for x in row] for row in log_level.tolist()]
    return AlignedPanel(
        dates=business_days(spec.start, spec.days),
        tickers=spec.ticker_names,
        prices=np.array(prices),
        target_index=spec.target_index,
    )


def load_synth_spec(source: str | Mapping[str, Any]) -> SynthSpec:
    """Parse a YAML/JSON spec given as text or an already-loaded mapping."""
    if isinstance(source, str):
        try:
            source = yaml.safe_load(source)
        except yaml.YAMLError as exc:
            raise BadSpec(f"unreadable synth spec: {exc}") from None
    if not isinstance(source, Mapping):
        raise BadSpec("synth spec must be a mapping")
    return SynthSpec.from_dict(source)


def bundled_spec() -> SynthSpec:
    """The 42-asset demo universe shipped with the package."""
    text = resources.files("convbt").joinpath("data/bundled_synth.yaml").read_text("utf-8")
    return load_synth_spec(text)


# --------------------------------------------------------------------------
# reference pipeline
#
# Straight-line transcription on Python lists and the math module. It shares
# no numerical code with the engine and exists only to cross-check it.


def _ref_validate(config, lag, n, n_assets):
    config.validate()
    if not isinstance(lag, int) or isinstance(lag, bool) or lag < 1:
        raise BadConfig(f"lag must be a positive integer, got {lag!r}")
    if n == "all":
        return n_assets, False
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise BadConfig(f"bad forecaster count {n!r}")
    if n > n_assets:
        return n_assets, True
    return n, False


def _ref_mean(xs):
    total = 0.0
    for x in xs:
        total += x
    return total / len(xs)


def _ref_std(xs):
    mu = _ref_mean(xs)
    ss = 0.0
    for x in xs:
        ss += (x - mu) * (x - mu)
    return math.sqrt(ss / (len(xs) - 1))


def _ref_sharpe(xs, annualization):
    """Returns ``(sharpe, degenerate)``."""
    first = xs[0]
    if all(x == first for x in xs):
        return 0.0, True
    sd = _ref_std(xs)
    if sd == 0.0:
        return 0.0, True
    return _ref_mean(xs) / sd * math.sqrt(annualization), False


def _ref_pick(scores, n):
    """Selection by repeated scan: best = non-degenerate, largest |s|, smallest ticker."""
    remaining = list(scores)
    chosen = []
    while remaining and len(chosen) < n:
        best = remaining[0]
        for cand in remaining[1:]:
            t_c, s_c, d_c = cand
            t_b, s_b, d_b = best
            if d_c != d_b:
                better = d_b and not d_c
            elif abs(s_c) != abs(s_b):
                better = abs(s_c) > abs(s_b)
            else:
                better = t_c < t_b
            if better:
                best = cand
        remaining.remove(best)
        chosen.append((best[0], best[1] < 0))
    return tuple(chosen)


def _ref_metrics(daily, cumulative, annualization):
    from .runner import Metrics

    realized = daily[1:]
    sharpe, degenerate = _ref_sharpe(realized, annualization)
    peak, worst = -math.inf, 0.0
    for c in cumulative:
        peak = c if c > peak else peak
        if c - peak < worst:
            worst = c - peak
    return Metrics(
        sharpe=sharpe,
        sharpe_degenerate=degenerate,
        annualized_return=_ref_mean(realized) * annualization + 0.0,
        annualized_vol=_ref_std(realized) * math.sqrt(annualization),
        max_drawdown=worst + 0.0,
    )


def reference_pipeline(panel: AlignedPanel, config, lag: int, n) -> Any:
    """Naive end-to-end recomputation of one scenario from raw prices."""
    from .runner import Scenario, StrategyResult
    from .selection import SelectionPlan, WeightSeries

    prices = panel.prices.tolist()
    T, M = len(prices), len(panel.tickers)
    n_eff, clamped = _ref_validate(config, lag, n, M)
    if T < 3:
        raise NotEnoughHistory("a scenario needs at least three dates")
    tgt = panel.target_index
    A = config.annualization

    # log returns per asset
    rets = [[math.log(prices[k + 1][j] / prices[k][j]) for k in range(T - 1)] for j in range(M)]
    K = T - 1

    # sign of EMA of returns
    alpha = 2.0 / (lag + 1.0)
    signals = []
    for j in range(M):
        prev = rets[j][0]
        sig = []
        for k in range(K):
            if k > 0:
                prev = alpha * rets[j][k] + (1.0 - alpha) * prev
            sig.append(1.0 if prev > 0 else (-1.0 if prev < 0 else 0.0))
        signals.append(sig)

    # forecaster tracks: yesterday's signal times today's target return
    tr = rets[tgt]
    tracks = []
    for j in range(M):
        daily = [0.0]
        for k in range(1, K):
            daily.append(signals[j][k - 1] * tr[k])
        tracks.append(daily)

    # selection
    tickers = panel.tickers
    if config.selection_mode == "in_sample":
        starts = [0]
        picks = [_ref_pick([(tickers[j], *_ref_sharpe(tracks[j], A)) for j in range(M)], n_eff)]
        rebalance = None
    else:
        rebalance = config.rebalance_every
        starts, picks = [], []
        k = 1
        while k < K:
            scores = [(tickers[j], *_ref_sharpe(tracks[j][: k + 1], A)) for j in range(M)]
            starts.append(k)
            picks.append(_ref_pick(scores, n_eff))
            k += rebalance

    # equal-weight combination
    col = {t: j for j, t in enumerate(tickers)}
    raw = []
    for k in range(K):
        active = None
        for s, p in zip(starts, picks):
            if s <= k:
                active = p
        if active is None:
            raw.append(0.0)
            continue
        total = 0.0
        for t, flip in active:
            v = signals[col[t]][k]
            total += -v if flip else v
        raw.append(total / len(active))

    # unscaled strategy returns and vol targeting
    pre_k = [0.0] + [raw[k - 1] * tr[k] for k in range(1, K)]
    vol, scaled = [0.0], [0.0]
    for k in range(1, K):
        window = pre_k[max(0, k - config.vol_window + 1) : k + 1]
        v = math.sqrt(A) * _ref_std(window)
        w = raw[k] * config.vol_target / max(v, config.vol_floor)
        w = min(config.leverage_cap, max(-config.leverage_cap, w))
        vol.append(v)
        scaled.append(w)

    # everything onto the date grid
    raw_d = [0.0] + [x + 0.0 for x in raw]
    scaled_d = [0.0] + [x + 0.0 for x in scaled]
    vol_d = [0.0] + vol

    def held(pos):
        out = [0.0]
        for t in range(1, T):
            out.append(pos[t - 1] * tr[t - 1])
        return out

    def running(xs):
        acc, out = 0.0, []
        for x in xs:
            acc += x
            out.append(acc)
        return out

    pre, daily, bench = held(raw_d), held(scaled_d), held([1.0] * T)
    pre_c, cum, bench_c = running(pre), running(daily), running(bench)
    plan = SelectionPlan(config.selection_mode, rebalance, tuple(starts), tuple(picks))
    arr = np.array
    return StrategyResult(
        scenario=Scenario(lag, n, n_eff, config.selection_mode, clamped),
        dates=panel.dates,
        weights=WeightSeries(arr(raw_d), arr(scaled_d), arr(vol_d)),
        pre_scaling_returns=arr(pre),
        pre_scaling_cumulative=arr(pre_c),
        daily_returns=arr(daily),
        cumulative=arr(cum),
        benchmark_returns=arr(bench),
        benchmark_cumulative=arr(bench_c),
        metrics=_ref_metrics(daily, cum, A),
        pre_scaling_metrics=_ref_metrics(pre, pre_c, A),
        benchmark=_ref_metrics(bench, bench_c, A),
        plan=plan,
        initial_capital=config.initial_capital,
    )

