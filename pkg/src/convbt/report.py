"""Serialization of results: JSON reports, plot-ready CSV series, manifests.

Numbers are written with ``repr`` so every float round-trips exactly.
Nothing time-dependent goes into result files; the run timestamp lives in
``manifest.json`` alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .errors import DataError, IoFailure
from .runner import Metrics, StrategyResult, compute_metrics

SERIES_COLUMNS = (
    "date",
    "raw_weight",
    "scaled_weight",
    "rolling_vol",
    "daily_return",
    "cumulative",
    "benchmark_cumulative",
)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def canonical_json(obj: Any) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


@dataclass
class RunManifest:
    config_digest: str
    input_digest: str
    artifact_version: str
    scenarios: list[str] = field(default_factory=list)
    timestamp: str | None = None

    def reproducible_part(self) -> dict:
        """Everything except the timestamp."""
        d = asdict(self)
        d.pop("timestamp")
        return d


def run_timestamp() -> str:
    """UTC ISO timestamp; honours ``SOURCE_DATE_EPOCH`` for pinned builds."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return now.replace(microsecond=0).isoformat()


def metrics_dict(m: Metrics) -> dict:
    return asdict(m)


def _floats(x: np.ndarray) -> list[float]:
    return [float(v) + 0.0 for v in np.asarray(x, dtype=float).tolist()]


def result_dict(result: StrategyResult, manifest: RunManifest | None = None, config: dict | None = None) -> dict:
    s = result.scenario
    plan = result.plan
    out: dict[str, Any] = {}
    if manifest is not None:
        out["manifest"] = manifest.reproducible_part()
    if config is not None:
        out["config"] = config
    out["scenario"] = {
        "label": s.label,
        "lag": s.lag,
        "n_requested": s.n_requested,
        "n_effective": s.n_effective,
        "selection_mode": s.selection_mode,
        "clamped": s.clamped,
    }
    out["metrics"] = metrics_dict(result.metrics)
    out["pre_scaling_metrics"] = metrics_dict(result.pre_scaling_metrics)
    out["benchmark"] = metrics_dict(result.benchmark)
    # plan indices are on the return grid; the decision is taken at the
    # close of dates[index + 1]
    out["plan"] = {
        "mode": plan.mode,
        "rebalance_every": plan.rebalance_every,
        "decisions": [
            {
                "index": k,
                "date": result.dates[k + 1].isoformat(),
                "chosen": [{"ticker": t, "flip": f} for t, f in chosen],
            }
            for k, chosen in zip(plan.decision_indices, plan.decisions)
        ],
    }
    out["initial_capital"] = result.initial_capital
    out["series"] = {
        "date": [d.isoformat() for d in result.dates],
        "raw_weight": _floats(result.weights.raw),
        "scaled_weight": _floats(result.weights.scaled),
        "rolling_vol": _floats(result.weights.rolling_vol),
        "daily_return": _floats(result.daily_returns),
        "cumulative": _floats(result.cumulative),
        "benchmark_cumulative": _floats(result.benchmark_cumulative),
        "pre_scaling_return": _floats(result.pre_scaling_returns),
        "pre_scaling_cumulative": _floats(result.pre_scaling_cumulative),
        "benchmark_return": _floats(result.benchmark_returns),
        "equity": _floats(result.equity),
    }
    return out


def series_csv(series: dict) -> str:
    """Plot-ready table with the fixed column set, one row per date."""
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SERIES_COLUMNS)
    cols = [series[c] for c in SERIES_COLUMNS]
    for row in zip(*cols):
        w.writerow([row[0], *(repr(float(x)) for x in row[1:])])
    return buf.getvalue()


def parse_series_csv(text: str) -> dict[str, list]:
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader, None)
    if header is None or tuple(header) != SERIES_COLUMNS:
        raise DataError(f"series file header must be {','.join(SERIES_COLUMNS)}")
    out: dict[str, list] = {c: [] for c in SERIES_COLUMNS}
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(SERIES_COLUMNS):
            raise DataError(f"series file line {lineno}: expected {len(SERIES_COLUMNS)} fields")
        out["date"].append(row[0])
        for c, v in zip(SERIES_COLUMNS[1:], row[1:]):
            out[c].append(float(v))
    return out


def metrics_from_series(series: dict, annualization: float = 252) -> Metrics:
    """Recompute strategy metrics from the ``daily_return``/``cumulative`` columns."""
    return compute_metrics(np.array(series["daily_return"]), np.array(series["cumulative"]), annualization)


def sharpe_table_csv(matrix: dict, benchmark_sharpe: float) -> str:
    """Forecaster counts down the rows, ``EMA(L)`` across, buy-and-hold last."""
    lags = list(matrix)
    counts = list(next(iter(matrix.values())))
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["forecasters", *(f"EMA({lag})" for lag in lags)])
    for n in counts:
        w.writerow([n, *(repr(matrix[lag][n]) for lag in lags)])
    w.writerow(["buy_and_hold", *(repr(benchmark_sharpe) for _ in lags)])
    return buf.getvalue()


def grid_dict(
    results: Sequence[StrategyResult], manifest: RunManifest | None = None, config: dict | None = None
) -> dict:
    from .runner import sharpe_matrix

    if not results:
        raise DataError("empty grid")
    out: dict[str, Any] = {}
    if manifest is not None:
        out["manifest"] = manifest.reproducible_part()
    if config is not None:
        out["config"] = config
    out["sharpe_matrix"] = {str(k): v for k, v in sharpe_matrix(results).items()}
    out["sharpe_matrix_pre_scaling"] = {str(k): v for k, v in sharpe_matrix(results, pre_scaling=True).items()}
    out["benchmark"] = metrics_dict(results[0].benchmark)
    out["scenarios"] = [
        {
            "label": r.scenario.label,
            "lag": r.scenario.lag,
            "n_requested": r.scenario.n_requested,
            "n_effective": r.scenario.n_effective,
            "clamped": r.scenario.clamped,
            "metrics": metrics_dict(r.metrics),
            "pre_scaling_metrics": metrics_dict(r.pre_scaling_metrics),
            "result_file": f"{r.scenario.label}/result.json",
        }
        for r in results
    ]
    return out


def dump_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from None
    return path


def emit_report(
    result: StrategyResult | Sequence[StrategyResult],
    out_dir: str | os.PathLike,
    manifest: RunManifest | None = None,
    config: dict | None = None,
) -> list[Path]:
    """Write result files for a scenario or a grid; returns the paths written.

    Scenario: ``result.json`` and ``series.csv``. Grid: ``grid.json``,
    ``sharpe_table.csv`` and one scenario directory per cell. In both cases
    ``manifest.json`` carries the digests plus the run timestamp.
    """
    out = Path(out_dir)
    written = []
    if isinstance(result, StrategyResult):
        d = result_dict(result, manifest, config)
        written.append(_write(out / "result.json", dump_json(d)))
        written.append(_write(out / "series.csv", series_csv(d["series"])))
    else:
        results = list(result)
        g = grid_dict(results, manifest, config)
        written.append(_write(out / "grid.json", dump_json(g)))
        written.append(_write(out / "sharpe_table.csv", sharpe_table_csv(g["sharpe_matrix"], g["benchmark"]["sharpe"])))
        for r in results:
            d = result_dict(r, manifest, config)
            written.append(_write(out / r.scenario.label / "result.json", dump_json(d)))
            written.append(_write(out / r.scenario.label / "series.csv", series_csv(d["series"])))
    if manifest is not None:
        m = asdict(manifest)
        m["timestamp"] = manifest.timestamp or run_timestamp()
        written.append(_write(out / "manifest.json", dump_json(m)))
    return written


def load_json(path: str | os.PathLike) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path} is not valid JSON: {exc}") from None


def metrics_close(a: Metrics | dict, b: Metrics | dict, tol: float = 1e-9) -> bool:
    a = asdict(a) if isinstance(a, Metrics) else a
    b = asdict(b) if isinstance(b, Metrics) else b
    for key in ("sharpe", "annualized_return", "annualized_vol", "max_drawdown"):
        if not math.isclose(a[key], b[key], rel_tol=0.0, abs_tol=tol):
            return False
    return a["sharpe_degenerate"] == b["sharpe_degenerate"]
