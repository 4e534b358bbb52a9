import json
import subprocess
import sys

import pytest

from eprsim import cli, events_io
from eprsim.cli import SCAN_COLUMNS, THEORY_COLUMNS


def run_cli(*argv):
    return cli.run(list(argv))


def _read_csv(path):
    rows = []
    with open(path) as fh:
        lines = [l.rstrip("\n") for l in fh if not l.startswith("#")]
    cols = lines[0].split(",")
    for line in lines[1:]:
        rows.append(dict(zip(cols, line.split(","))))
    return cols, rows


class TestSimulate:
    def test_deterministic_reruns(self, tmp_path):
        args = ["simulate", "--config", "table1-demo", "--tau", "0.25",
                "--frames", "400", "--seed", "42"]
        assert run_cli(*args, "--out", str(tmp_path / "a")) == 0
        assert run_cli(*args, "--out", str(tmp_path / "b")) == 0
        fa = tmp_path / "a" / "events_near_field_tau0.25us.events.csv"
        fb = tmp_path / "b" / "events_near_field_tau0.25us.events.csv"
        assert fa.read_bytes() == fb.read_bytes()

    def test_schedule_produces_disjoint_id_ranges(self, tmp_path):
        out = tmp_path / "sched"
        assert run_cli("simulate", "--config", "table1-demo", "--tau", "0.25,1,3",
                       "--frames", "50", "--seed", "1", "--out", str(out)) == 0
        files = sorted(out.glob("*.events.csv"))
        assert len(files) == 3
        ranges = []
        for f in files:
            meta, frames = events_io.read_events(str(f))
            list(frames)
            ranges.append((meta.frame_id_start, meta.frame_id_start + meta.frame_count))
        ranges.sort()
        assert ranges == [(0, 50), (50, 100), (100, 150)]

    def test_missing_sigma_plus_exits_2(self, tmp_path, capsys):
        doc = json.loads((cli_config_text()))
        del doc["state"]["sigma_plus"]
        p = tmp_path / "bad.json"
        p.write_text(json.dumps(doc))
        rc = run_cli("simulate", "--config", str(p), "--out", str(tmp_path / "o"))
        assert rc == 2
        assert "state.sigma_plus" in capsys.readouterr().err

    def test_set_override_switches_basis(self, tmp_path):
        out = tmp_path / "far"
        assert run_cli("simulate", "--config", "table1-demo", "--tau", "0.5",
                       "--frames", "50", "--seed", "2",
                       "--set", "detector.basis=far_field", "--out", str(out)) == 0
        assert (out / "events_far_field_tau0.5us.events.csv").exists()

    def test_output_io_failure_exits_3(self, tmp_path):
        blocker = tmp_path / "blocker"
        blocker.write_text("not a directory")
        rc = run_cli("simulate", "--config", "table1-demo", "--tau", "0.25",
                     "--frames", "10", "--out", str(blocker / "sub"))
        assert rc == 3


def cli_config_text():
    from eprsim.config import example_config_text
    return example_config_text("table1-demo")


def _simulated_pair(tmp_path, frames=6000, seed=11, tau="0.25"):
    out = tmp_path / "events"
    assert run_cli("simulate", "--config", "table1-demo", "--tau", tau,
                   "--frames", str(frames), "--seed", str(seed),
                   "--out", str(out)) == 0
    assert run_cli("simulate", "--config", "table1-demo", "--tau", tau,
                   "--frames", str(frames), "--seed", str(seed + 1),
                   "--set", "detector.basis=far_field", "--out", str(out)) == 0
    return sorted(str(p) for p in out.glob("*.events.csv"))


class TestAnalyze:
    def test_full_report_and_outputs(self, tmp_path):
        files = _simulated_pair(tmp_path)
        out = tmp_path / "analysis"
        assert run_cli("analyze", *files, "--out", str(out)) == 0
        report = json.loads((out / "report.json").read_text())
        assert set(report["var_diff_pos_mm2"]) == {"x", "y"}
        assert set(report["var_sum_mom_hbar2_per_mm2"]) == {"x", "y"}
        assert report["regime_avg"] in ("EprParadox", "InseparableOnly", "Unverified")
        assert set(report["fits"]) == {"near_field_x", "near_field_y",
                                       "far_field_x", "far_field_y"}
        assert all(isinstance(f["converged"], bool) for f in report["fits"].values())
        assert (out / "composite_position_difference_x.csv").exists()
        assert (out / "composite_momentum_sum_y.csv").exists()
        assert (out / "map_near_field_x.csv").exists()
        assert (out / "map_far_field_y.csv").exists()

    def test_rerun_byte_identical_report(self, tmp_path):
        files = _simulated_pair(tmp_path, frames=3000)
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert run_cli("analyze", *files, "--out", str(a), "--no-maps") == 0
        assert run_cli("analyze", *files, "--out", str(b), "--no-maps") == 0
        assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()

    def test_far_field_only_partial_report(self, tmp_path):
        import os
        files = [f for f in _simulated_pair(tmp_path, frames=3000)
                 if "far_field" in os.path.basename(f)]
        out = tmp_path / "partial"
        assert run_cli("analyze", *files, "--out", str(out), "--no-maps") == 0
        report = json.loads((out / "report.json").read_text())
        assert report["var_diff_pos_mm2"] == {}
        assert set(report["var_sum_mom_hbar2_per_mm2"]) == {"x", "y"}
        assert report["products_hbar2"] == {}
        assert report["product_avg_hbar2"] is None
        assert report["dimension"] is None

    def test_corrupt_row_exits_4_naming_line(self, tmp_path, capsys):
        files = _simulated_pair(tmp_path, frames=500)
        target = files[0]
        lines = open(target).read().splitlines()
        lines[5] = lines[5].replace(",S,", ",Q,").replace(",AS,", ",Q,")
        open(target, "w").write("\n".join(lines) + "\n")
        rc = run_cli("analyze", *files, "--out", str(tmp_path / "x"), "--no-maps")
        assert rc == 4
        err = capsys.readouterr().err
        assert "line 6" in err

    def test_missing_file_exits(self, tmp_path):
        rc = run_cli("analyze", str(tmp_path / "nope.events.csv"),
                     "--out", str(tmp_path / "y"))
        assert rc == 3


class TestTheory:
    def test_reference_values_at_tau0(self, tmp_path):
        out = tmp_path / "t"
        assert run_cli("theory", "--config", "table1-demo", "--tau", "0:3:0.25",
                       "--out", str(out)) == 0
        cols, rows = _read_csv(out / "theory.csv")
        assert cols == THEORY_COLUMNS
        row0 = rows[0]
        assert float(row0["tau_us"]) == 0.0
        assert float(row0["model_var_diff_pos_mm2"]) == pytest.approx(0.040, rel=0.01)
        assert float(row0["model_var_sum_mom_hbar2_per_mm2"]) == pytest.approx(2.05, rel=0.01)
        assert float(row0["model_product_hbar2"]) == pytest.approx(0.082, rel=0.01)
        assert float(row0["model_dimension"]) == pytest.approx(12.2, rel=0.01)

    def test_exact_vs_linearized_within_10_percent(self, tmp_path):
        out = tmp_path / "t2"
        # D*tau <= sigma_plus^2/4 over this range
        assert run_cli("theory", "--config", "table1-demo", "--tau", "0:8:0.5",
                       "--out", str(out)) == 0
        _, rows = _read_csv(out / "theory.csv")
        for row in rows:
            exact = float(row["model_product_hbar2"])
            lin = float(row["model_product_linear_hbar2"])
            assert abs(lin - exact) / exact < 0.10

    def test_no_diffusion_gives_constant_columns(self, tmp_path):
        out = tmp_path / "t3"
        assert run_cli("theory", "--config", "table1-demo", "--tau", "0:5:1",
                       "--set", "diffusion.coefficient=0.0", "--out", str(out)) == 0
        _, rows = _read_csv(out / "theory.csv")
        for col in THEORY_COLUMNS[1:]:
            vals = {row[col] for row in rows}
            assert len(vals) == 1

    def test_separable_demo_saturates_mancini(self, tmp_path):
        out = tmp_path / "t4"
        assert run_cli("theory", "--config", "separable-demo", "--tau", "0:1:0.5",
                       "--out", str(out)) == 0
        _, rows = _read_csv(out / "theory.csv")
        assert float(rows[0]["model_product_hbar2"]) == pytest.approx(1.0, rel=1e-12)
        assert float(rows[0]["model_dimension"]) == pytest.approx(1.0, rel=1e-12)

    def test_bad_range_exits_2(self, tmp_path):
        rc = run_cli("theory", "--config", "table1-demo", "--tau", "0:5:-1",
                     "--out", str(tmp_path / "t5"))
        assert rc == 2


class TestScan:
    def test_scan_schema_and_status(self, tmp_path):
        out = tmp_path / "scan"
        assert run_cli("scan", "--config", "table1-demo", "--tau", "0.25,2",
                       "--frames", "8000", "--out", str(out)) == 0
        cols, rows = _read_csv(out / "scan.csv")
        assert cols == SCAN_COLUMNS
        # scan columns start with exactly the theory columns (curve overlay)
        assert cols[:len(THEORY_COLUMNS)] == THEORY_COLUMNS
        assert len(rows) == 2
        for row in rows:
            assert row["status"] == "ok"
            assert row["regime"] in ("EprParadox", "InseparableOnly", "Unverified")
            assert float(row["net_coincidences"]) > 0

    def test_single_tau_exits_2(self, tmp_path):
        rc = run_cli("scan", "--config", "table1-demo", "--tau", "0.25",
                     "--frames", "100", "--out", str(tmp_path / "s"))
        assert rc == 2


class TestUsage:
    def test_unknown_command_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 2

    def test_console_script_smoke(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "eprsim.cli", "theory", "--config", "table1-demo",
             "--tau", "0:1:0.5", "--out", str(tmp_path / "cs")],
            capture_output=True, text=True)
        assert proc.returncode == 0
        assert (tmp_path / "cs" / "theory.csv").exists()

    def test_unknown_config_name_exits_2(self, tmp_path):
        rc = run_cli("theory", "--config", "does-not-exist",
                     "--out", str(tmp_path / "u"))
        assert rc == 2

    def test_example_config_with_json_suffix(self, tmp_path):
        rc = run_cli("simulate", "--config", "table1-demo.json", "--tau", "0.25",
                     "--frames", "20", "--seed", "5", "--out", str(tmp_path / "j"))
        assert rc == 0
