import csv
import io
import json

import numpy as np
import pytest

from convbt import cli
from convbt.errors import IoFailure
from convbt.market_data import panel_to_long_csv, panel_to_wide_csv
from convbt.report import (
    SERIES_COLUMNS,
    emit_report,
    metrics_from_series,
    metrics_close,
    parse_series_csv,
)
from convbt.runner import BacktestConfig, run_scenario

from conftest import synth_panel


def run(*argv):
    return cli.main([str(a) for a in argv])


def last_stderr_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    return err[0]


@pytest.fixture
def csv5(tmp_path):
    path = tmp_path / "panel.csv"
    path.write_text(panel_to_long_csv(synth_panel(seed=11, assets=5, days=300)))
    return path


def read_matrix(path):
    rows = list(csv.reader(io.StringIO(path.read_text())))
    return rows[0], rows[1:]


class TestGridCommand:
    def test_defaults_give_three_by_four(self, tmp_path, capsys):
        assert run("grid", "--out", tmp_path / "g") == 0
        header, rows = read_matrix(tmp_path / "g" / "sharpe_table.csv")
        assert header == ["forecasters", "EMA(3)", "EMA(25)", "EMA(500)"]
        assert [r[0] for r in rows] == ["10", "20", "30", "all", "buy_and_hold"]
        assert all(len(r) == 4 and all(v for v in r) for r in rows)
        grid = json.loads((tmp_path / "g" / "grid.json").read_text())
        assert list(grid["sharpe_matrix"]) == ["3", "25", "500"]
        assert all(list(v) == ["10", "20", "30", "all"] for v in grid["sharpe_matrix"].values())
        assert "EMA(3)" in capsys.readouterr().out

    def test_rerun_is_byte_identical(self, tmp_path, csv5):
        args = ("--data", csv5, "--target", "A00", "--lags", "3,25", "--counts", "2,all")
        assert run("grid", *args, "--out", tmp_path / "a") == 0
        assert run("grid", *args, "--out", tmp_path / "b", "--workers", "3") == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert len(files) == 3 + 2 * 4
        for rel in files:
            if rel.name == "manifest.json":
                a, b = (json.loads((tmp_path / d / rel).read_text()) for d in "ab")
                a.pop("timestamp"), b.pop("timestamp")
                assert a == b
            else:
                assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes(), rel

    def test_report_verifies_grid(self, tmp_path, csv5, capsys):
        run("grid", "--data", csv5, "--target", "A00", "--lags", "3", "--counts", "2", "--out", tmp_path / "g")
        assert run("report", tmp_path / "g", "--out", tmp_path / "r") == 0
        assert (tmp_path / "r" / "sharpe_table.csv").read_bytes() == (tmp_path / "g" / "sharpe_table.csv").read_bytes()
        assert "ok" in capsys.readouterr().out


class TestBacktestCommand:
    def test_single_asset_tracks_benchmark(self, tmp_path):
        data = tmp_path / "one.csv"
        data.write_text(panel_to_long_csv(synth_panel(seed=2, assets=1, days=150, drift=0.001, vol=0.0)))
        assert run("backtest", "--data", data, "--target", "A00", "--lag", 3, "--n-forecasters", 1, "--out", tmp_path / "o") == 0
        s = json.loads((tmp_path / "o" / "result.json").read_text())["series"]
        bench = np.array(s["benchmark_cumulative"])
        pre = np.array(s["pre_scaling_cumulative"])
        # the only divergence is the first return, made before any signal exists
        np.testing.assert_allclose(pre[1:], bench[1:] - bench[1], rtol=0, atol=1e-12)

    def test_series_file_has_one_row_per_date(self, tmp_path, csv5):
        assert run("backtest", "--data", csv5, "--target", "A00", "--lag", 25, "--n-forecasters", 3, "--out", tmp_path) == 0
        lines = (tmp_path / "series.csv").read_text().splitlines()
        assert lines[0] == ",".join(SERIES_COLUMNS)
        assert len(lines) - 1 == 300

    def test_metrics_recomputable_from_series(self, tmp_path, csv5):
        run("backtest", "--data", csv5, "--target", "A00", "--mode", "walk_forward", "--out", tmp_path)
        recorded = json.loads((tmp_path / "result.json").read_text())["metrics"]
        series = parse_series_csv((tmp_path / "series.csv").read_text())
        assert metrics_close(metrics_from_series(series), recorded, tol=1e-9)

    def test_report_round_trip(self, tmp_path, csv5, capsys):
        run("backtest", "--data", csv5, "--target", "A00", "--out", tmp_path / "o")
        assert run("report", tmp_path / "o" / "result.json", "--out", tmp_path / "r") == 0
        label = json.loads((tmp_path / "o" / "result.json").read_text())["scenario"]["label"]
        assert (tmp_path / "r" / label / "series.csv").read_bytes() == (tmp_path / "o" / "series.csv").read_bytes()
        rerendered = json.loads((tmp_path / "r" / label / "metrics.json").read_text())["metrics"]
        original = json.loads((tmp_path / "o" / "result.json").read_text())["metrics"]
        assert rerendered == original

    def test_tampered_result_is_invariant_failure(self, tmp_path, csv5, capsys):
        run("backtest", "--data", csv5, "--target", "A00", "--out", tmp_path)
        doc = json.loads((tmp_path / "result.json").read_text())
        doc["metrics"]["sharpe"] += 0.1
        (tmp_path / "result.json").write_text(json.dumps(doc))
        capsys.readouterr()
        assert run("report", tmp_path / "result.json") == 3

    def test_config_file_with_flag_override(self, tmp_path, csv5):
        cfg = tmp_path / "cfg.yaml"
        cfg.write_text(f"data_path: {csv5}\ntarget_ticker: A00\nlags: [25]\nforecaster_counts: [2]\nvol_target: 0.02\n")
        assert run("backtest", "--config", cfg, "--lag", 3, "--out", tmp_path / "o") == 0
        doc = json.loads((tmp_path / "o" / "result.json").read_text())
        assert doc["scenario"]["lag"] == 3 and doc["scenario"]["n_requested"] == 2
        assert doc["config"]["vol_target"] == 0.02

    def test_manifest_digests(self, tmp_path, csv5):
        run("backtest", "--data", csv5, "--target", "A00", "--out", tmp_path / "a")
        run("backtest", "--data", csv5, "--target", "A00", "--vol-target", "0.02", "--out", tmp_path / "b")
        a, b = (json.loads((tmp_path / d / "manifest.json").read_text()) for d in "ab")
        assert a["input_digest"] == b["input_digest"]
        assert a["config_digest"] != b["config_digest"]
        assert "timestamp" in a

    def test_wide_input_gives_same_result(self, tmp_path):
        p = synth_panel(seed=11, assets=4, days=120)
        (tmp_path / "long.csv").write_text(panel_to_long_csv(p))
        (tmp_path / "wide.csv").write_text(panel_to_wide_csv(p))
        for name in ("long", "wide"):
            assert run("backtest", "--data", tmp_path / f"{name}.csv", "--target", "A00", "--out", tmp_path / name) == 0
        assert (tmp_path / "long" / "series.csv").read_bytes() == (tmp_path / "wide" / "series.csv").read_bytes()


class TestExitCodes:
    def test_data_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("date,ticker,close\n2020-01-02,A,1.0\n2020-01-03,A,-2\n")
        assert run("backtest", "--data", bad, "--target", "A", "--out", tmp_path / "o") == 1
        line = last_stderr_line(capsys)
        assert line.startswith("convbt: exit=1 error=NonPositivePrice")
        assert not (tmp_path / "o").exists()

    def test_empty_intersection(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text("date,ticker,close\n2020-01-02,A,1\n2020-01-03,A,2\n2020-01-06,B,1\n2020-01-07,B,2\n")
        assert run("grid", "--data", data, "--target", "A", "--out", tmp_path / "o") == 1
        assert "InsufficientOverlap" in last_stderr_line(capsys)
        assert not (tmp_path / "o").exists()

    def test_missing_file_is_data_error(self, tmp_path, capsys):
        assert run("backtest", "--data", tmp_path / "nope.csv", "--target", "A") == 1
        assert "IoFailure" in last_stderr_line(capsys)

    @pytest.mark.parametrize(
        "argv",
        [
            ("backtest", "--lags", "3,x"),
            ("backtest", "--vol-target", "-1"),
            ("grid", "--mode", "sideways"),
            ("frobnicate",),
            ("backtest", "--target", "NOPE"),
        ],
    )
    def test_config_errors(self, argv, capsys, tmp_path):
        assert run(*argv, *(() if argv == ("frobnicate",) else ("--out", tmp_path))) == 2
        assert last_stderr_line(capsys).startswith("convbt: exit=2 ")

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("lag: 3\n")
        assert run("grid", "--config", cfg) == 2
        assert "unknown config keys" in last_stderr_line(capsys)

    def test_invariant_violation(self, tmp_path, csv5, capsys, monkeypatch):
        def broken(*a, **k):
            raise cli.InvariantViolation("scaled weight exceeds leverage cap")

        monkeypatch.setattr(cli, "check_invariants", broken)
        assert run("backtest", "--data", csv5, "--target", "A00", "--out", tmp_path) == 3
        line = last_stderr_line(capsys)
        assert line == 'convbt: exit=3 error=InvariantViolation message="scaled weight exceeds leverage cap"'

    def test_write_failure(self, tmp_path, csv5, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("")
        assert run("backtest", "--data", csv5, "--target", "A00", "--out", blocker / "sub") == 1
        assert "IoFailure" in last_stderr_line(capsys)

    def test_emit_report_raises_io_failure(self, tmp_path, rpanel5):
        blocker = tmp_path / "file"
        blocker.write_text("")
        with pytest.raises(IoFailure):
            emit_report(run_scenario(rpanel5, BacktestConfig(), 3, 2), blocker / "x")


class TestIngestAndSynth:
    def test_ingest_reports_drops(self, tmp_path, capsys):
        data = tmp_path / "d.csv"
        data.write_text(
            "date,ticker,close\n"
            "2020-01-02,A,1\n2020-01-03,A,2\n2020-01-06,A,3\n2020-01-07,A,4\n"
            "2020-01-02,B,5\n2020-01-06,B,6\n2020-01-07,B,7\n"
        )
        assert run("ingest", "--data", data, "--target", "A", "--out", tmp_path / "o") == 0
        rep = json.loads((tmp_path / "o" / "ingest_report.json").read_text())
        assert rep["n_dates"] == 3 and rep["drop_counts"] == {"A": 0, "B": 1}
        assert (tmp_path / "o" / "aligned_panel.csv").read_text().splitlines()[0] == "date,A,B"

        assert run("ingest", "--data", data, "--target", "A", "--fill-policy", "forward_fill", "--out", tmp_path / "f") == 0
        rep = json.loads((tmp_path / "f" / "ingest_report.json").read_text())
        assert rep["n_dates"] == 4 and rep["drop_counts"] == {"A": 0, "B": 0}

    def test_synth_then_ingest(self, tmp_path):
        spec = tmp_path / "spec.yaml"
        spec.write_text("seed: 5\nassets: 3\ndays: 50\nloading: 0.2\nregimes:\n  - {length: 49, drift: 0.0, vol: 0.01}\n")
        assert run("synth", "--spec", spec, "--layout", "wide", "--out", tmp_path / "p.csv") == 0
        assert run("ingest", "--data", tmp_path / "p.csv", "--target", "A00", "--out", tmp_path / "o") == 0
        rep = json.loads((tmp_path / "o" / "ingest_report.json").read_text())
        assert rep["tickers"] == ["A00", "A01", "A02"] and rep["n_dates"] == 50

    def test_synth_bad_spec_is_config_error(self, tmp_path, capsys):
        spec = tmp_path / "spec.yaml"
        spec.write_text("seed: 5\nassets: 3\ndays: 50\nregimes:\n  - {length: 10, vol: 0.01}\n")
        assert run("synth", "--spec", spec, "--out", tmp_path / "p.csv") == 2
        assert "BadSpec" in last_stderr_line(capsys)

    def test_synth_default_is_bundled(self, tmp_path):
        assert run("synth", "--out", tmp_path / "a.csv") == 0
        assert run("synth", "--out", tmp_path / "b.csv") == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
