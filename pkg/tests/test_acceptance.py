"""Acceptance criteria, one test per criterion.

Each test prints a single ``[acceptance] criterion N: PASS/FAIL`` line
(visible with ``pytest -s``); ``pytest -v`` shows the same verdicts through
the test names.  Criteria with heavy Monte Carlo share module-scoped
fixtures.  Tolerances are pinned here, not calibrated elsewhere.
"""

import json
import math
import time

import numpy as np
import pytest

import oracles
from conftest import random_states
from eprsim import analysis, cli, model
from test_events_io import assert_roundtrip

TAU_SCAN = "0.25,1,2,3,4.5,6,7.5,9"
SCAN_FRAMES = 300000
C5_FRAMES = 200000


def _report_line(num, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] criterion {num:2d}: {status}  {detail}")
    assert passed, f"criterion {num} failed: {detail}"


def _run_cli(*argv):
    return cli.run(list(argv))


def _read_scan(path):
    with open(path) as fh:
        lines = [l.rstrip("\n") for l in fh if not l.startswith("#")]
    cols = lines[0].split(",")
    return [dict(zip(cols, line.split(","))) for line in lines[1:]]


def _analyze_run(tmp, frames, seed, name, extra_sets=()):
    out = tmp / f"events_{name}"
    for i, basis_set in enumerate(((), ("--set", "detector.basis=far_field"))):
        rc = _run_cli("simulate", "--config", "table1-demo", "--tau", "0.25",
                      "--frames", str(frames), "--seed", str(seed + i),
                      *basis_set, *extra_sets, "--out", str(out))
        assert rc == 0
    files = sorted(str(p) for p in out.glob("*.events.csv"))
    assert len(files) == 2
    rc = _run_cli("analyze", *files, "--out", str(out / "analysis"), "--no-maps")
    assert rc == 0
    return json.loads((out / "analysis" / "report.json").read_text())


@pytest.fixture(scope="module")
def c5_report(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("c5")
    t0 = time.perf_counter()
    report = _analyze_run(tmp, C5_FRAMES, seed=501, name="c5")
    report["_elapsed"] = time.perf_counter() - t0
    return report


@pytest.fixture(scope="module")
def scan_rows(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scan")
    t0 = time.perf_counter()
    rc = _run_cli("scan", "--config", "table1-demo", "--tau", TAU_SCAN,
                  "--frames", str(SCAN_FRAMES), "--seed", "601",
                  "--out", str(tmp))
    assert rc == 0
    rows = _read_scan(tmp / "scan.csv")
    return rows, time.perf_counter() - t0


def test_criterion_01_table_calibration(tmp_path):
    t0 = time.perf_counter()
    rc = _run_cli("theory", "--config", "table1-demo", "--tau", "0:9:0.25",
                  "--out", str(tmp_path))
    elapsed = time.perf_counter() - t0
    assert rc == 0
    row0 = _read_scan(tmp_path / "theory.csv")[0]
    targets = {
        "model_var_diff_pos_mm2": 0.040,
        "model_var_sum_mom_hbar2_per_mm2": 2.05,
        "model_product_hbar2": 0.082,
        "model_dimension": 12.2,
    }
    errs = {k: abs(float(row0[k]) - v) / v for k, v in targets.items()}
    ok = all(e <= 0.01 for e in errs.values()) and elapsed < 1.0
    _report_line(1, ok, f"max rel err {max(errs.values()):.2e}, {elapsed:.2f}s")


def test_criterion_02_fourier_duality():
    t0 = time.perf_counter()
    rng = np.random.default_rng(202)
    worst = 0.0
    for state in random_states(rng, 20):
        diff = model.DiffusionModel(rng.uniform(0.001, 0.05))
        for tau in (0.0, 1.0, 5.0):
            x, X, num = oracles.fft_position_slice(state, diff, tau)
            n = x.size
            rm = np.stack([np.broadcast_to(x[:, None], (n, n)),
                           np.zeros((n, n))], axis=-1)
            Rm = np.stack([np.broadcast_to(X[None, :], (n, n)),
                           np.zeros((n, n))], axis=-1)
            closed = model.psi_position(state, diff, tau, rm, Rm)
            worst = max(worst, float(np.max(np.abs(num - closed / np.max(closed)))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 30.0
    _report_line(2, ok, f"worst grid error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_03_saturation_invariants():
    t0 = time.perf_counter()
    rng = np.random.default_rng(303)
    taus = np.linspace(0.0, 20.0, 50)
    worst0 = 0.0
    ok = True
    for state in random_states(rng, 100):
        diff = model.DiffusionModel(rng.uniform(0.0, 0.1))
        cv0 = model.composite_variances(state, diff, 0.0)
        worst0 = max(worst0, abs(cv0.var_diff_pos * cv0.var_diff_mom - 1.0),
                     abs(cv0.var_sum_pos * cv0.var_sum_mom - 1.0))
        for tau in taus[1:]:
            cv = model.composite_variances(state, diff, tau)
            ok = ok and cv.var_diff_pos * cv.var_diff_mom >= 1.0 - 1e-9
            ok = ok and cv.var_sum_pos * cv.var_sum_mom >= 1.0 - 1e-9
    elapsed = time.perf_counter() - t0
    ok = ok and worst0 <= 1e-9 and elapsed < 5.0
    _report_line(3, ok, f"tau=0 saturation error {worst0:.2e}, {elapsed:.1f}s")


def test_criterion_04_quadrature_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    worst = 0.0
    for state in random_states(rng, 20):
        diff = model.DiffusionModel(rng.uniform(0.001, 0.05))
        tau = rng.uniform(0.0, 8.0)
        cv = model.composite_variances(state, diff, tau)
        qp = oracles.quad_position_moments(state, diff, tau)
        qm = oracles.quad_momentum_moments(state, diff, tau)
        vd_q = qp["var_a"] + qp["var_b"] - 2 * qp["cov_ab"]
        vs_q = qm["var_a"] + qm["var_b"] + 2 * qm["cov_ab"]
        eta = model.pair_rate_factor(state, diff, tau)
        eta_q = oracles.quad_pair_rate_factor(state, diff, tau)
        worst = max(worst,
                    abs(cv.var_diff_pos - vd_q) / vd_q,
                    abs(cv.var_sum_mom - vs_q) / vs_q,
                    abs(cv.product - vd_q * vs_q) / (vd_q * vs_q),
                    abs(eta - eta_q) / eta_q)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-6 and elapsed < 60.0
    _report_line(4, ok, f"worst rel err {worst:.2e}, {elapsed:.1f}s")


def _recovery_check(report, sref, dref):
    cv = model.composite_variances(sref, dref, 0.25)
    vp = report["avg_var_diff_pos_mm2"]
    vm = report["avg_var_sum_mom_hbar2_per_mm2"]
    z_pos = abs(vp["value"] - cv.var_diff_pos) / vp["sigma"]
    z_mom = abs(vm["value"] - cv.var_sum_mom) / vm["sigma"]
    return z_pos, z_mom


def test_criterion_05_monte_carlo_recovery(c5_report, sref, dref):
    z_pos, z_mom = _recovery_check(c5_report, sref, dref)
    regime_ok = c5_report["regime_avg"] == "EprParadox"
    elapsed = c5_report["_elapsed"]
    ok = z_pos <= 3.0 and z_mom <= 3.0 and regime_ok and elapsed < 120.0
    _report_line(5, ok, f"z_pos {z_pos:.2f}, z_mom {z_mom:.2f}, "
                        f"regime {c5_report['regime_avg']}, {elapsed:.1f}s")


def test_criterion_06_decay_scan(scan_rows, sref, dref):
    rows, elapsed = scan_rows
    ok = all(r["status"] == "ok" for r in rows)
    taus = [float(r["tau_us"]) for r in rows]
    products = [float(r["meas_product_hbar2"]) for r in rows]
    errs = [float(r["meas_product_err_hbar2"]) for r in rows]
    # monotone non-decreasing within error bars
    mono = all(products[i + 1] >= products[i]
               - 3 * math.hypot(errs[i], errs[i + 1])
               for i in range(len(rows) - 1))
    regimes = [r["regime"] for r in rows]
    epr = [i for i, r in enumerate(regimes) if r == "EprParadox"]
    non_epr = [i for i, r in enumerate(regimes) if r != "EprParadox"]
    tau_star = model.epr_lifetime(sref, dref).tau_star
    single_transition = bool(epr and non_epr) and max(epr) + 1 == min(non_epr)
    bracket_ok = (single_transition
                  and taus[max(epr)] < tau_star + 0.75
                  and taus[min(non_epr)] > tau_star - 0.75)
    ok = ok and mono and bracket_ok and elapsed < 600.0
    _report_line(6, ok, f"transition ({taus[max(epr)] if epr else '-'}, "
                        f"{taus[min(non_epr)] if non_epr else '-'}) us around "
                        f"tau*={tau_star:.2f}, monotone={mono}, {elapsed:.0f}s")


def test_criterion_07_uncertainty_propagation():
    from eprsim.fitting import GaussianFit

    def stub(v, s):
        cov = np.zeros((4, 4))
        cov[2, 2] = s * s
        return GaussianFit(1.0, 0.0, v, 0.0, cov, 1.0, True)

    report = analysis.estimate_variances(
        pos_fits={"x": stub(0.040, 0.004), "y": stub(0.040, 0.004)},
        mom_fits={"x": stub(2.6, 0.1), "y": stub(1.50, 0.04)})
    px = report.products["x"]
    avg_mom = report.avg_var_sum_mom
    dim = report.dimension
    checks = {
        "product 0.10": round(px.value, 2) == 0.10,
        "product err 0.01": round(px.sigma, 2) == 0.01,
        "avg momentum 2.05": round(avg_mom.value, 2) == 2.05,
        "dimension 12.2": round(dim.value, 1) == 12.2,
        "dimension err 0.9": round(dim.sigma, 1) == 0.9,
    }
    ok = all(checks.values())
    _report_line(7, ok, ", ".join(k for k, v in checks.items() if not v) or
                 "matches the reference arithmetic to table rounding")


def test_criterion_08_background_robustness(c5_report, tmp_path_factory, sref, dref):
    tmp = tmp_path_factory.mktemp("c8")
    t0 = time.perf_counter()
    dark = _analyze_run(tmp, C5_FRAMES, seed=801, name="c8",
                        extra_sets=("--set", "detector.dark_rate=0.5"))
    elapsed = time.perf_counter() - t0
    zs = []
    for key in ("avg_var_diff_pos_mm2", "avg_var_sum_mom_hbar2_per_mm2"):
        a, b = dark[key], c5_report[key]
        zs.append(abs(a["value"] - b["value"]) / math.hypot(a["sigma"], b["sigma"]))
    z_pos, z_mom = _recovery_check(dark, sref, dref)
    ok = all(z <= 3.0 for z in zs) and z_pos <= 3.0 and z_mom <= 3.0
    _report_line(8, ok, f"dark-vs-clean z {zs[0]:.2f}/{zs[1]:.2f}, "
                        f"model z {z_pos:.2f}/{z_mom:.2f}, {elapsed:.1f}s")


def test_criterion_09_pair_rate_decay(scan_rows, sref, dref):
    rows, _ = scan_rows
    eta = [float(r["model_pair_rate_factor"]) for r in rows]
    net = [float(r["net_coincidences"]) for r in rows]
    err = [float(r["net_coincidences_err"]) for r in rows]
    base = net[0] / eta[0]
    worst = 0.0
    ok = True
    for j in range(1, len(rows)):
        pred = eta[j] * base
        se = math.hypot(err[j], eta[j] / eta[0] * err[0])
        z = abs(net[j] - pred) / se
        worst = max(worst, z)
        ok = ok and z <= 3.0
    _report_line(9, ok, f"worst pair-rate z {worst:.2f}")


def test_criterion_10_determinism_and_parse(tmp_path):
    # (a) byte-identical rerun with a fixed seed
    args = ["simulate", "--config", "table1-demo", "--tau", "0.25,1",
            "--frames", "1500", "--seed", "77"]
    assert _run_cli(*args, "--out", str(tmp_path / "a")) == 0
    assert _run_cli(*args, "--out", str(tmp_path / "b")) == 0
    names = sorted(p.name for p in (tmp_path / "a").glob("*.events.csv"))
    identical = bool(names) and all(
        (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
        for n in names)

    # (b) events-io round-trip property suite, 1000 random runs
    from eprsim import events_io
    from eprsim.simulate import Arm, DetectionEvent, Frame
    rng = np.random.default_rng(1010)
    special = [0.0, -0.0, 1e-300, -1e300, 0.1, 1 / 3]
    for _ in range(1000):
        n = int(rng.integers(0, 7))
        start = int(rng.integers(0, 50))
        frames = []
        for i in range(n):
            events = []
            for _ in range(int(rng.integers(0, 4))):
                if rng.random() < 0.2:
                    coord = (float(rng.choice(special)), float(rng.choice(special)))
                else:
                    coord = (float(rng.normal() * 10.0 ** float(rng.integers(-4, 4))),
                             float(rng.normal()))
                arm = Arm.STOKES if rng.random() < 0.5 else Arm.ANTI_STOKES
                events.append(DetectionEvent(arm, coord))
            frames.append(Frame(start + i, tuple(events)))
        basis = model.Basis.NEAR_FIELD if rng.random() < 0.5 else model.Basis.FAR_FIELD
        metadata = events_io.RunMetadata(basis=basis, frame_count=n,
                                         frame_id_start=start)
        assert_roundtrip(frames, metadata)

    # (c) malformed inputs return the documented exit codes
    target = tmp_path / "a" / names[0]
    corrupted = tmp_path / "corrupt.events.csv"
    lines = target.read_text().splitlines()
    lines[3] = "not,a,valid,row"
    corrupted.write_text("\n".join(lines) + "\n")
    rc_parse = _run_cli("analyze", str(corrupted), "--out", str(tmp_path / "x"))
    no_meta = tmp_path / "nometa.events.csv"
    no_meta.write_text("frame_id,arm,u,v\n")
    rc_meta = _run_cli("analyze", str(no_meta), "--out", str(tmp_path / "y"))
    rc_config = _run_cli("theory", "--config", "no-such-config",
                         "--out", str(tmp_path / "z"))
    blocker = tmp_path / "blocker"
    blocker.write_text("file")
    rc_io = _run_cli("simulate", "--config", "table1-demo", "--tau", "0.25",
                     "--frames", "5", "--out", str(blocker / "sub"))
    codes_ok = (rc_parse == 4 and rc_meta == 4 and rc_config == 2 and rc_io == 3)

    ok = identical and codes_ok
    _report_line(10, ok, f"byte-identical={identical}, exit codes "
                         f"parse={rc_parse} meta={rc_meta} config={rc_config} io={rc_io}, "
                         f"1000 round trips")
