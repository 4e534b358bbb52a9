"""Command-line orchestration: simulate / analyze / scan / theory.

Exit codes: 0 success, 2 configuration or usage problem, 3 output I/O
failure, 4 input parse failure.  Every command is deterministic given
(config, seed): reruns produce byte-identical output files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__, analysis, events_io, model, simulate
from ._kernels import backend_name
from .config import (ConfigError, apply_override, build_config,
                     load_config_document, parse_override_value)
from .errors import EventsFormatError, ParameterDomainError

# scan rows start with exactly the theory columns so the curves overlay
THEORY_COLUMNS = [
    "tau_us",
    "model_var_diff_pos_mm2",
    "model_var_sum_mom_hbar2_per_mm2",
    "model_product_hbar2",
    "model_product_linear_hbar2",
    "model_dimension",
    "model_pair_rate_factor",
]
SCAN_COLUMNS = THEORY_COLUMNS + [
    "meas_var_diff_pos_mm2",
    "meas_var_diff_pos_err_mm2",
    "meas_var_sum_mom_hbar2_per_mm2",
    "meas_var_sum_mom_err_hbar2_per_mm2",
    "meas_product_hbar2",
    "meas_product_err_hbar2",
    "regime",
    "meas_dimension",
    "meas_dimension_err",
    "net_coincidences",
    "net_coincidences_err",
    "status",
]

_PRIMARY_KINDS = {
    model.Basis.NEAR_FIELD: analysis.CompositeKind.POSITION_DIFFERENCE,
    model.Basis.FAR_FIELD: analysis.CompositeKind.MOMENTUM_SUM,
}


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path, columns, rows, header_comments=()):
    with open(path, "w", encoding="ascii", newline="") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_csv_cell(v) for v in row) + "\n")


def _parse_tau_values(text):
    """Accept a comma list '0.25,1,3' or an inclusive range '0:9:0.5'."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError("tau", f"range must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("tau", "range step must be > 0")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = [start + i * step for i in range(max(n, 0))]
    else:
        try:
            values = [float(p) for p in text.split(",") if p.strip() != ""]
        except ValueError:
            raise ConfigError("tau", f"bad tau list {text!r}") from None
    if not values:
        raise ConfigError("tau", f"no tau values in {text!r}")
    for v in values:
        if v < 0:
            raise ConfigError("tau", f"tau must be >= 0, got {v}")
    return values


def _load_run_config(args, schedule_from_flags=False):
    doc = load_config_document(args.config)
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError("set", f"override must look like path=value, got {item!r}")
        dotted, _, raw = item.partition("=")
        apply_override(doc, dotted.strip(), parse_override_value(raw))
    if getattr(args, "seed", None) is not None:
        apply_override(doc, "seed", args.seed)
    if getattr(args, "out", None):
        apply_override(doc, "output.dir", args.out)
    if getattr(args, "bins", None) is not None:
        apply_override(doc, "analysis.bins", args.bins)
    if getattr(args, "shift", None) is not None:
        apply_override(doc, "analysis.shift", args.shift)
    if not schedule_from_flags:
        return build_config(doc)
    # simulate: --tau/--frames rewrite the schedule
    if getattr(args, "tau", None):
        taus = _parse_tau_values(args.tau)
        frames = args.frames
        if frames is None:
            sched = doc.get("schedule") or [{}]
            frames = sched[0].get("frames")
        if not isinstance(frames, int) or frames <= 0:
            raise ConfigError("frames", "need a positive --frames with --tau")
        apply_override(doc, "schedule",
                       [{"tau": t, "frames": frames} for t in taus])
    elif getattr(args, "frames", None):
        sched = doc.get("schedule")
        if not isinstance(sched, list):
            raise ConfigError("schedule", "missing schedule to apply --frames to")
        apply_override(doc, "schedule",
                       [{"tau": e.get("tau"), "frames": args.frames} for e in sched])
    return build_config(doc)


def _events_filename(basis, tau):
    return f"events_{basis.value}_tau{tau:g}us.events.csv"


def _metadata_for(cfg, detector, tau, frame_count, frame_id_start, seed):
    return events_io.RunMetadata(
        basis=detector.basis,
        frame_count=frame_count,
        frame_id_start=frame_id_start,
        tau=tau,
        seed=seed,
        detector=detector.to_json_dict(),
        truth={
            "epsilon": cfg.state.epsilon,
            "sigma_minus": cfg.state.sigma_minus,
            "sigma_plus": cfg.state.sigma_plus,
            "diffusion_coefficient": cfg.diffusion.diffusion_coefficient,
            "readout_time": cfg.diffusion.readout_time,
        },
    )


def cmd_simulate(args):
    cfg = _load_run_config(args, schedule_from_flags=True)
    os.makedirs(cfg.out_dir, exist_ok=True)
    detector = cfg.detector
    for run in simulate.run_experiment(cfg.state, cfg.diffusion, cfg.schedule,
                                       detector, cfg.seed):
        meta = _metadata_for(cfg, detector, run.tau, run.block.n_frames,
                             run.block.frame_id_start, cfg.seed)
        path = os.path.join(cfg.out_dir, _events_filename(detector.basis, run.tau))
        events_io.write_block(run.block, meta, path)
        print(path)
    return 0


def _table_from_file(path):
    metadata, frames = events_io.read_events(path)
    pitch = None
    if metadata.detector:
        pitch = metadata.detector.get("pixel_pitch")
    table = analysis.EventTable.from_frames(frames, metadata.basis, pitch)
    if table.frame_count != metadata.frame_count:
        # trailing empty frames are reconstructed by the reader, so the only
        # way to get here is a reader/metadata bug
        raise EventsFormatError("frame count mismatch", path=path)
    return metadata, table


def _analyze_tables(per_basis, bins, shift, pixel_correction, tau):
    """Fit composite histograms per basis/axis and build the report plus
    the fitted histograms for CSV output."""
    fits = {model.Basis.NEAR_FIELD: {}, model.Basis.FAR_FIELD: {}}
    hists = {}
    converged_all = True
    for basis, tables in per_basis.items():
        kind = _PRIMARY_KINDS[basis]
        for axis in (analysis.Axis.X, analysis.Axis.Y):
            hist = analysis.composite_histogram(tables, axis, kind,
                                                binning=bins, shift=shift)
            fit = analysis.fit_gaussian(hist)
            fits[basis][axis.value] = fit
            hists[(basis, axis)] = (kind, hist, fit)
            converged_all = converged_all and fit.converged

    def correction(basis):
        if not pixel_correction:
            return 0.0
        tabs = per_basis.get(basis)
        if not tabs or tabs[0].pitch is None:
            return 0.0
        return 2.0 * tabs[0].pitch**2 / 12.0

    report = analysis.estimate_variances(
        pos_fits=fits[model.Basis.NEAR_FIELD] or None,
        mom_fits=fits[model.Basis.FAR_FIELD] or None,
        pixel_correction_pos=correction(model.Basis.NEAR_FIELD),
        pixel_correction_mom=correction(model.Basis.FAR_FIELD),
        tau=tau)
    return report, hists, converged_all


def _map_binning(table, axis):
    """Pixel-aligned map binning covering the data, coarsened to <= 512 bins."""
    pitch = table.pitch or 1.0
    sv = table.s_x if axis is analysis.Axis.X else table.s_y
    av = table.as_x if axis is analysis.Axis.X else table.as_y
    lo = min(float(np.min(sv)) if sv.size else -1.0,
             float(np.min(av)) if av.size else -1.0) - pitch
    hi = max(float(np.max(sv)) if sv.size else 1.0,
             float(np.max(av)) if av.size else 1.0) + pitch
    n = int(np.ceil((hi - lo) / pitch))
    factor = max(1, int(np.ceil(n / 512)))
    n = int(np.ceil(n / factor))
    return analysis.Binning(lo, lo + n * factor * pitch, n)


def _write_composite_csv(out_dir, basis, axis, kind, hist, fit, correction):
    path = os.path.join(out_dir, f"composite_{kind.value}_{axis.value}.csv")
    curve = None
    if fit is not None:
        from .fitting import gaussian_model
        curve = gaussian_model(hist.centers, fit.amplitude, fit.mean,
                               fit.variance, fit.offset)
    comments = [
        f"basis={basis.value}",
        f"axis={axis.value}",
        f"kind={kind.value}",
        f"units={basis.coord_unit}",
    ]
    if fit is not None:
        comments += [
            f"fit_amplitude={fit.amplitude!r}",
            f"fit_mean={fit.mean!r}",
            f"fit_variance={fit.variance!r}",
            f"fit_variance_err={fit.variance_sigma!r}",
            f"fit_offset={fit.offset!r}",
            f"fit_chi_squared={fit.chi_squared!r}",
            f"fit_converged={fit.converged}",
            f"pixel_correction={correction!r}",
        ]
    rows = [(c, n, v, None if curve is None else curve[i])
            for i, (c, n, v) in enumerate(zip(hist.centers, hist.counts, hist.variance))]
    _write_csv(path, ["bin_center", "net_count", "variance", "fit"], rows, comments)
    return path


def _write_map_csv(out_dir, basis, axis, net):
    path = os.path.join(out_dir, f"map_{basis.value}_{axis.value}.csv")
    xc = 0.5 * (net.x_edges[:-1] + net.x_edges[1:])
    yc = 0.5 * (net.y_edges[:-1] + net.y_edges[1:])
    rows = []
    for i in range(xc.size):
        for j in range(yc.size):
            rows.append((float(xc[i]), float(yc[j]),
                         float(net.counts[i, j]), float(net.variance[i, j])))
    _write_csv(path, ["stokes_center", "anti_stokes_center", "net_count", "variance"],
               rows, [f"basis={basis.value}", f"axis={axis.value}",
                      f"units={basis.coord_unit}"])
    return path


def cmd_analyze(args):
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    per_basis = {}
    metas = []
    for path in args.events:
        metadata, table = _table_from_file(path)
        metas.append(metadata)
        per_basis.setdefault(metadata.basis, []).append(table)

    taus = {m.tau for m in metas}
    tau = taus.pop() if len(taus) == 1 else None
    shift = args.shift if args.shift is not None else 1
    pixel_correction = args.pixel_correction != "off"

    report, hists, _ = _analyze_tables(per_basis, args.bins, shift,
                                       pixel_correction, tau)

    written = []
    for (basis, axis), (kind, hist, fit) in sorted(
            hists.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value)):
        corr = 0.0
        if pixel_correction and per_basis[basis][0].pitch:
            corr = 2.0 * per_basis[basis][0].pitch**2 / 12.0
        written.append(_write_composite_csv(out_dir, basis, axis, kind, hist, fit, corr))

    if args.maps:
        for basis, tables in sorted(per_basis.items(), key=lambda kv: kv[0].value):
            for axis in (analysis.Axis.X, analysis.Axis.Y):
                b = _map_binning(tables[0], axis)
                joint = analysis.joint_map(tables, axis, b)
                acc = analysis.accidental_map(tables, axis, b, shift=shift)
                net = analysis.subtract_background(joint, acc)
                written.append(_write_map_csv(out_dir, basis, axis, net))

    doc = report.to_json_dict()
    doc["schema_version"] = 1
    doc["fits"] = {
        f"{basis.value}_{axis.value}": {
            "amplitude": fit.amplitude,
            "mean": fit.mean,
            "variance": fit.variance,
            "variance_err": fit.variance_sigma,
            "offset": fit.offset,
            "chi_squared": fit.chi_squared,
            "converged": fit.converged,
        }
        for (basis, axis), (_, _, fit) in sorted(
            hists.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))
    }
    doc["inputs"] = [str(p) for p in args.events]
    doc["kernel_backend"] = backend_name()
    doc["frame_counts"] = {b.value: int(sum(t.frame_count for t in ts))
                           for b, ts in sorted(per_basis.items(), key=lambda kv: kv[0].value)}
    totals = {}
    for basis, tables in sorted(per_basis.items(), key=lambda kv: kv[0].value):
        sig, bg = analysis.coincidence_totals(tables, shift=shift)
        totals[basis.value] = {"signal_pairs": sig, "shifted_pairs": bg,
                               "net": sig - bg}
    doc["coincidences"] = totals
    report_path = os.path.join(out_dir, "report.json")
    with open(report_path, "w", encoding="ascii", newline="") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2, allow_nan=False)
        fh.write("\n")
    written.append(report_path)
    for p in written:
        print(p)
    return 0


def _theory_row(cfg, tau):
    cv = model.composite_variances(cfg.state, cfg.diffusion, tau)
    return [
        tau,
        cv.var_diff_pos,
        cv.var_sum_mom,
        cv.product,
        model.composite_product_linearized(cfg.state, cfg.diffusion, tau),
        model.entanglement_dimension(cfg.state, cfg.diffusion, tau),
        model.pair_rate_factor(cfg.state, cfg.diffusion, tau),
    ]


def cmd_theory(args):
    cfg = _load_run_config(args)
    taus = _parse_tau_values(args.tau) if args.tau else _parse_tau_values("0:10:0.25")
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "theory.csv")
    rows = [_theory_row(cfg, t) for t in taus]
    _write_csv(path, THEORY_COLUMNS, rows,
               [f"eprsim={__version__}", "units: lengths mm, momenta hbar/mm, "
                "time us, products hbar^2"])
    print(path)
    return 0


def cmd_scan(args):
    cfg = _load_run_config(args)
    if args.tau:
        taus = _parse_tau_values(args.tau)
    else:
        taus = [t for t, _ in cfg.schedule]
    if len(taus) < 2:
        raise ConfigError("tau", "scan needs at least 2 tau values")
    frames = args.frames or cfg.schedule[0][1]
    os.makedirs(cfg.out_dir, exist_ok=True)

    shift = cfg.shift
    rows = []
    run_index = 0
    for tau in taus:
        model_cols = _theory_row(cfg, tau)
        try:
            per_basis = {}
            net = net_var = 0.0
            for basis in (model.Basis.NEAR_FIELD, model.Basis.FAR_FIELD):
                detector = cfg.with_basis(basis).detector
                block = simulate.generate_block(
                    cfg.state, cfg.diffusion, tau, detector, 0, frames,
                    cfg.seed + run_index)
                run_index += 1
                table = analysis.EventTable.from_block(block, basis,
                                                       detector.pixel_pitch)
                per_basis[basis] = [table]
                sig, bg = analysis.coincidence_totals([table], shift=shift)
                net += sig - bg
                net_var += sig + bg
            report, _, _ = _analyze_tables(per_basis, cfg.bins, shift,
                                           cfg.pixel_correction, tau)
            vp = report.avg_var_diff_pos
            vm = report.avg_var_sum_mom
            pa = report.product_avg
            dim = report.dimension
            rows.append(model_cols + [
                vp.value, vp.sigma, vm.value, vm.sigma,
                pa.value, pa.sigma,
                report.regime_avg.value,
                None if dim is None else dim.value,
                None if dim is None else dim.sigma,
                net, float(np.sqrt(net_var)),
                "ok",
            ])
        except Exception as exc:  # per-tau failures become row status
            rows.append(model_cols + [None] * 9 + [None, f"error:{type(exc).__name__}"])
    path = os.path.join(cfg.out_dir, "scan.csv")
    _write_csv(path, SCAN_COLUMNS, rows,
               [f"eprsim={__version__}", f"frames_per_basis={frames}",
                f"shift={shift}", "units: lengths mm, momenta hbar/mm, "
                "time us, products hbar^2"])
    print(path)
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="eprsim",
        description="Simulate and analyze position-momentum EPR entanglement "
                    "between a photon and an atomic spin wave.")
    p.add_argument("--version", action="version", version=f"eprsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config_flags(sp):
        sp.add_argument("--config", required=True,
                        help="config JSON path or packaged example name "
                             "(table1-demo, separable-demo)")
        sp.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override a config leaf via its dotted path")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (overrides output.dir)")

    sp = sub.add_parser("simulate", help="generate synthetic event files")
    add_config_flags(sp)
    sp.add_argument("--tau", help="tau list '0.25,3' or range '0:9:0.5' (us)")
    sp.add_argument("--frames", type=int, help="frames per tau block")
    sp.add_argument("--bins", type=int, help=argparse.SUPPRESS)
    sp.add_argument("--shift", type=int, help=argparse.SUPPRESS)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("analyze", help="reconstruct statistics from event files")
    sp.add_argument("events", nargs="+", help="input .events.csv files")
    sp.add_argument("--bins", type=int, help="composite histogram bin count")
    sp.add_argument("--shift", type=int, help="accidental-estimate frame shift")
    sp.add_argument("--out", help="output directory (default .)")
    sp.add_argument("--maps", action=argparse.BooleanOptionalAction, default=True,
                    help="write 2D net coincidence maps")
    sp.add_argument("--pixel-correction", choices=("on", "off"), default="on")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("scan", help="simulate+analyze a tau scan")
    add_config_flags(sp)
    sp.add_argument("--tau", help="tau list or range (needs >= 2 values)")
    sp.add_argument("--frames", type=int, help="frames per tau per basis")
    sp.add_argument("--bins", type=int)
    sp.add_argument("--shift", type=int)
    sp.set_defaults(func=cmd_scan)

    sp = sub.add_parser("theory", help="exact model curves, no randomness")
    add_config_flags(sp)
    sp.add_argument("--tau", help="tau list or range (default 0:10:0.25)")
    sp.set_defaults(func=cmd_theory)
    return p


def run(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"eprsim: config error: {exc}", file=sys.stderr)
        return 2
    except ParameterDomainError as exc:
        print(f"eprsim: {exc}", file=sys.stderr)
        return 2
    except EventsFormatError as exc:
        print(f"eprsim: parse error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"eprsim: i/o error: {exc}", file=sys.stderr)
        return 3


def main(argv=None):
    return run(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
