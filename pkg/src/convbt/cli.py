"""Command-line entry point.

Subcommands: ``ingest``, ``backtest``, ``grid``, ``synth``, ``report``.
Settings come from an optional YAML/JSON config file and are overridden by
flags. Exit codes: 0 ok, 1 data error, 2 config error, 3 internal
invariant violation. Failures print one ``key=value`` line on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import __version__
from .errors import ConfigError, DataError, InvariantViolation, IoFailure
from .market_data import (
    AlignedPanel,
    CsvSchema,
    align_panel,
    panel_digest_bytes,
    panel_to_long_csv,
    panel_to_wide_csv,
    parse_price_csv,
    rebase,
)
from .report import (
    RunManifest,
    canonical_json,
    dump_json,
    emit_report,
    load_json,
    metrics_close,
    metrics_from_series,
    series_csv,
    sha256_hex,
    sharpe_table_csv,
    _write,
)
from .runner import ALL, BacktestConfig, StrategyResult, run_grid, run_scenario
from .synth import bundled_spec, generate_panel, load_synth_spec

logger = logging.getLogger("convbt")

EXIT_OK, EXIT_DATA, EXIT_CONFIG, EXIT_INVARIANT = 0, 1, 2, 3

CONFIG_KEYS = (
    "data_path",
    "target_ticker",
    "lags",
    "forecaster_counts",
    "vol_window",
    "vol_target",
    "leverage_cap",
    "vol_floor",
    "selection_mode",
    "rebalance_every",
    "annualization",
    "initial_capital",
    "fill_policy",
    "max_gap",
    "output_dir",
)
BUNDLED_TARGET = "ES1"


@dataclass
class RunSettings:
    """Resolved CLI settings: engine config plus I/O knobs."""

    engine: BacktestConfig
    data_path: str | None = None
    fill_policy: str = "inner_join"
    max_gap: int | None = None
    output_dir: str = "convbt_out"
    layout: str = "auto"

    def digest_payload(self) -> dict:
        return {
            "engine": self.engine.to_dict(),
            "fill_policy": self.fill_policy,
            "max_gap": self.max_gap,
        }


# --------------------------------------------------------------------------
# config resolution


def _csv_list(text: str, allow_all: bool = False) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if allow_all and item == ALL:
            out.append(ALL)
            continue
        try:
            out.append(int(item))
        except ValueError:
            raise ConfigError(f"expected integer list, got {text!r}") from None
    return out


def read_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must be a mapping")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    return data


def resolve_settings(args: argparse.Namespace) -> RunSettings:
    raw = read_config_file(getattr(args, "config", None))
    overrides = {
        "data_path": getattr(args, "data", None),
        "target_ticker": getattr(args, "target", None),
        "lags": _csv_list(args.lags) if getattr(args, "lags", None) else None,
        "forecaster_counts": _csv_list(args.counts, allow_all=True) if getattr(args, "counts", None) else None,
        "vol_window": getattr(args, "vol_window", None),
        "vol_target": getattr(args, "vol_target", None),
        "leverage_cap": getattr(args, "leverage_cap", None),
        "vol_floor": getattr(args, "vol_floor", None),
        "selection_mode": getattr(args, "mode", None),
        "rebalance_every": getattr(args, "rebalance_every", None),
        "annualization": getattr(args, "annualization", None),
        "initial_capital": getattr(args, "initial_capital", None),
        "fill_policy": getattr(args, "fill_policy", None),
        "max_gap": getattr(args, "max_gap", None),
        "output_dir": getattr(args, "out", None),
    }
    raw.update({k: v for k, v in overrides.items() if v is not None})

    engine_keys = {f.name for f in fields(BacktestConfig)}
    engine_kwargs = {k: v for k, v in raw.items() if k in engine_keys}
    if isinstance(engine_kwargs.get("forecaster_counts"), list):
        engine_kwargs["forecaster_counts"] = [
            ALL if isinstance(c, str) and c.strip().lower() == ALL else c for c in engine_kwargs["forecaster_counts"]
        ]
    for key in ("vol_target", "leverage_cap", "vol_floor", "annualization", "initial_capital"):
        if isinstance(engine_kwargs.get(key), int) and not isinstance(engine_kwargs[key], bool):
            engine_kwargs[key] = float(engine_kwargs[key])
    if raw.get("data_path") is None and engine_kwargs.get("target_ticker") is None:
        engine_kwargs["target_ticker"] = BUNDLED_TARGET
    try:
        engine = BacktestConfig(**engine_kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None

    fill = raw.get("fill_policy", "inner_join")
    if fill not in ("inner_join", "forward_fill"):
        raise ConfigError(f"fill_policy must be inner_join or forward_fill, got {fill!r}")
    max_gap = raw.get("max_gap")
    if fill == "forward_fill":
        max_gap = 5 if max_gap is None else max_gap
        if not isinstance(max_gap, int) or isinstance(max_gap, bool) or max_gap < 0:
            raise ConfigError(f"max_gap must be a non-negative integer, got {max_gap!r}")
    return RunSettings(
        engine=engine,
        data_path=raw.get("data_path"),
        fill_policy=fill,
        max_gap=max_gap,
        output_dir=str(raw.get("output_dir") or "convbt_out"),
        layout=getattr(args, "layout", "auto") or "auto",
    )


def load_aligned(settings: RunSettings) -> AlignedPanel:
    """Aligned panel from ``data_path``, or the bundled synthetic universe."""
    if settings.data_path is None:
        logger.info("no data_path given; using bundled synthetic panel")
        panel = generate_panel(bundled_spec())
        if settings.engine.target_ticker != panel.target:
            if settings.engine.target_ticker not in panel.tickers:
                raise ConfigError(f"target {settings.engine.target_ticker!r} not in bundled panel")
            panel = AlignedPanel(panel.dates, panel.tickers, panel.prices, panel.tickers.index(settings.engine.target_ticker))
        return panel
    if settings.engine.target_ticker is None:
        raise ConfigError("target_ticker is required when data_path is given")
    try:
        data = Path(settings.data_path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {settings.data_path}: {exc}") from None
    series = parse_price_csv(data, CsvSchema(layout=settings.layout))
    return align_panel(series, settings.engine.target_ticker, settings.fill_policy, settings.max_gap)


def make_manifest(settings: RunSettings, panel: AlignedPanel, scenarios: Sequence[str]) -> RunManifest:
    return RunManifest(
        config_digest=sha256_hex(canonical_json(settings.digest_payload())),
        input_digest=sha256_hex(panel_digest_bytes(panel)),
        artifact_version=__version__,
        scenarios=list(scenarios),
    )


def check_invariants(result: StrategyResult, config: BacktestConfig) -> None:
    """Post-run sanity checks; a failure means an engine defect."""
    cum = np.cumsum(result.daily_returns)
    if not np.allclose(cum, result.cumulative, rtol=0, atol=1e-12):
        raise InvariantViolation("cumulative is not the running sum of daily returns")
    if result.metrics.max_drawdown > 0:
        raise InvariantViolation("positive max drawdown")
    if np.any(np.abs(result.weights.scaled) > config.leverage_cap):
        raise InvariantViolation("scaled weight exceeds leverage cap")
    if np.any(np.abs(result.weights.raw) > 1):
        raise InvariantViolation("combined raw weight outside [-1, 1]")
    for m in (result.metrics, result.pre_scaling_metrics, result.benchmark):
        if not all(math.isfinite(v) for v in (m.sharpe, m.annualized_return, m.annualized_vol, m.max_drawdown)):
            raise InvariantViolation(f"non-finite metric in {result.scenario.label}")


# --------------------------------------------------------------------------
# subcommands


def cmd_ingest(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    if settings.data_path is None:
        raise ConfigError("ingest needs --data or data_path")
    panel = load_aligned(settings)
    out = Path(settings.output_dir)
    _write(out / "aligned_panel.csv", panel_to_wide_csv(panel))
    report = {
        "tickers": list(panel.tickers),
        "target_ticker": panel.target,
        "n_dates": len(panel.dates),
        "first_date": panel.dates[0].isoformat(),
        "last_date": panel.dates[-1].isoformat(),
        "fill_policy": settings.fill_policy,
        "max_gap": settings.max_gap,
        "drop_counts": {t: panel.drop_counts.get(t, 0) for t in panel.tickers},
        "input_digest": sha256_hex(panel_digest_bytes(panel)),
    }
    _write(out / "ingest_report.json", dump_json(report))
    print(f"aligned {len(panel.tickers)} tickers over {len(panel.dates)} dates -> {out}")
    return EXIT_OK


def cmd_backtest(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    cfg = settings.engine
    lag = args.lag if args.lag is not None else cfg.lags[0]
    n: Any = args.n_forecasters if args.n_forecasters is not None else cfg.forecaster_counts[0]
    if isinstance(n, str):
        n = ALL if n == ALL else _csv_list(n)[0]
    panel = load_aligned(settings)
    result = run_scenario(rebase(panel), cfg, lag, n)
    check_invariants(result, cfg)
    manifest = make_manifest(settings, panel, [result.scenario.label])
    emit_report(result, settings.output_dir, manifest, cfg.to_dict())
    m = result.metrics
    print(
        f"{result.scenario.label}: sharpe={m.sharpe:.4f} "
        f"(pre-scaling {result.pre_scaling_metrics.sharpe:.4f}, buy&hold {result.benchmark.sharpe:.4f}) "
        f"-> {settings.output_dir}"
    )
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    settings = resolve_settings(args)
    cfg = settings.engine
    panel = load_aligned(settings)
    results = run_grid(rebase(panel), cfg, max_workers=args.workers)
    for r in results:
        check_invariants(r, cfg)
    manifest = make_manifest(settings, panel, [r.scenario.label for r in results])
    emit_report(results, settings.output_dir, manifest, cfg.to_dict())
    print(Path(settings.output_dir, "sharpe_table.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    if args.spec:
        try:
            text = Path(args.spec).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read synth spec {args.spec}: {exc}") from None
        spec = load_synth_spec(text)
    else:
        spec = bundled_spec()
    panel = generate_panel(spec)
    text = panel_to_wide_csv(panel) if args.layout == "wide" else panel_to_long_csv(panel)
    _write(Path(args.out), text)
    print(f"wrote {spec.assets} assets x {spec.days} days (target {panel.target}) -> {args.out}")
    return EXIT_OK


def _rerender_scenario(doc: dict, out: Path | None) -> bool:
    series = doc["series"]
    annualization = doc.get("config", {}).get("annualization", 252)
    recomputed = metrics_from_series(series, annualization)
    ok = metrics_close(recomputed, doc["metrics"])
    label = doc["scenario"]["label"]
    print(
        f"{label}: sharpe={recomputed.sharpe!r} annualized_vol={recomputed.annualized_vol!r} "
        f"max_drawdown={recomputed.max_drawdown!r} {'ok' if ok else 'MISMATCH'}"
    )
    if out is not None:
        _write(out / label / "series.csv", series_csv(series))
        _write(out / label / "metrics.json", dump_json({"label": label, "metrics": recomputed.__dict__}))
    return ok


def cmd_report(args: argparse.Namespace) -> int:
    path = Path(args.result)
    if path.is_dir():
        path = path / "grid.json" if (path / "grid.json").exists() else path / "result.json"
    doc = load_json(path)
    out = Path(args.out) if args.out else None
    ok = True
    if "sharpe_matrix" in doc:
        for entry in doc["scenarios"]:
            sub = load_json(path.parent / entry["result_file"])
            ok &= _rerender_scenario(sub, out)
            if not metrics_close(sub["metrics"], entry["metrics"]):
                ok = False
        if out is not None:
            _write(out / "sharpe_table.csv", sharpe_table_csv(doc["sharpe_matrix"], doc["benchmark"]["sharpe"]))
    elif "series" in doc:
        ok = _rerender_scenario(doc, out)
    else:
        raise DataError(f"{path} is neither a scenario nor a grid result")
    if not ok:
        raise InvariantViolation("recomputed metrics disagree with the recorded ones")
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--data", help="input CSV (long or wide layout)")
    p.add_argument("--layout", choices=("auto", "long", "wide"), default="auto", help="input CSV layout")
    p.add_argument("--target", help="traded ticker")
    p.add_argument("--fill-policy", dest="fill_policy", choices=("inner_join", "forward_fill"))
    p.add_argument("--max-gap", dest="max_gap", type=int, help="forward-fill limit in calendar days")
    p.add_argument("--out", help="output directory")


def _add_engine(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lags", help="comma-separated EMA lags")
    p.add_argument("--counts", help="comma-separated forecaster counts ('all' allowed)")
    p.add_argument("--vol-window", dest="vol_window", type=int)
    p.add_argument("--vol-target", dest="vol_target", type=float)
    p.add_argument("--leverage-cap", dest="leverage_cap", type=float)
    p.add_argument("--vol-floor", dest="vol_floor", type=float)
    p.add_argument("--mode", choices=("in_sample", "walk_forward"))
    p.add_argument("--rebalance-every", dest="rebalance_every", type=int)
    p.add_argument("--annualization", type=float)
    p.add_argument("--initial-capital", dest="initial_capital", type=float)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # single-line diagnostic, config exit code
        raise ConfigError(f"usage: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convbt", description="EMA sign-signal backtester with absolute-Sharpe selection and vol targeting.")
    parser.add_argument("--version", action="version", version=f"convbt {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="validate and align a CSV panel")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("backtest", help="run one (lag, N) scenario")
    _add_common(p)
    _add_engine(p)
    p.add_argument("--lag", type=int)
    p.add_argument("--n-forecasters", dest="n_forecasters", help="integer or 'all'")
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("grid", help="run the lags x counts sweep")
    _add_common(p)
    _add_engine(p)
    p.add_argument("--workers", type=int, default=None, help="parallel scenario threads")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("synth", help="write a synthetic panel CSV")
    p.add_argument("--spec", help="SynthSpec YAML/JSON file (default: bundled 42-asset spec)")
    p.add_argument("--layout", choices=("long", "wide"), default="long")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="re-render and verify a saved result")
    p.add_argument("result", help="result.json, grid.json or an output directory")
    p.add_argument("--out", help="directory for re-rendered files")
    p.set_defaults(func=cmd_report)
    return parser


def _diagnostic(code: int, exc: BaseException) -> str:
    return f"convbt: exit={code} error={type(exc).__name__} message={json.dumps(str(exc))}"


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, DataError):
        return EXIT_DATA
    # InvariantViolation and anything unexpected are engine defects
    return EXIT_INVARIANT


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except Exception as exc:  # noqa: BLE001
        code = _exit_code(exc)
        if code == EXIT_INVARIANT and not isinstance(exc, InvariantViolation):
            logger.debug("unexpected failure", exc_info=True)
        print(_diagnostic(code, exc), file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
