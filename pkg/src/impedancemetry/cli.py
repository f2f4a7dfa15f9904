"""Command-line front end: ``impedancemetry {sweep,calibrate,resolution,qcap,plan}``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import experiments, planner, plots
from .analysis import FitError, write_rows
from .config import ConfigError, ExperimentConfig, config_from_dict, dump_config, load_config
from .tank import CalibrationError, UnstableTankError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_FIT = 0, 2, 3, 4
OUTPUT_ENV = "IMPEDANCEMETRY_OUTPUT_DIR"
SCHEMA_VERSION = 1

# pinned CSV layouts; golden tests compare against these
SCHEMAS = {
    "sweep_curve": ["f_hz", "vout_v", "phase_rad"],
    "sweep_summary": ["cl_code", "cr_code", "c_l_f", "c_r_f", "l_h", "r_series_ohm", "fr_hz", "q",
                      "stable", "saturated"],
    "sensitivity_points": ["cr_code", "fr_hz", "q", "c_m_f", "dphi_rad", "alpha_rad_per_f"],
    "sensitivity_fit": ["q", "alpha_rad_per_f", "residual_rad_per_f"],
    "sensitivity_summary": ["slope_per_f", "c_tot_recovered_f", "c_tot_configured_f",
                            "relative_error", "r2"],
    "resolution": ["method", "estimator", "tint_s", "cm_snr1_f", "snr", "white_prediction_f",
                   "ratio_to_white", "saturated", "samples"],
    "resolution_fit": ["method", "exponent", "a_f_sqrt_s", "sc_f_per_sqrt_hz", "sc_configured_f_per_sqrt_hz",
                       "white_regime"],
    "qcap_map": ["dv_v", "vbg_v", "vgs_v", "dcdv_f_per_v", "analytic_f_per_v"],
    "qcap_tracks": ["dv_v", "peak", "vbg_v", "vgs_v", "beta", "r2"],
    "qcap_integrated": ["dv_v", "vbg_v", "vgs_v", "delta_c_f", "analytic_delta_c_f"],
    "qcap_smear": ["dv_v", "vbg_v", "center_v", "peak_dip_f_per_v", "analytic_peak_dip_f_per_v",
                   "amplitude_ratio", "separation_v", "smeared"],
    "plan_footprint": ["architecture", "element", "scaling", "count", "unit_footprint_mm2", "total_mm2"],
    "plan_density": ["technology", "density_h_per_mm2", "ratio", "orders_of_magnitude",
                     "claimed_orders", "discrepancy", "note"],
    "plan_summary": ["n", "m", "bandwidth_hz", "readout_time_s", "spacing_hz", "channels",
                     "power_per_qubit_w"],
    "plan_channels": ["channel", "f_hz"],
    "plan_presets": ["preset", "channels", "n", "qubits"],
}

log = logging.getLogger("impedancemetry")


class Writer:
    """Serialized output: CSV files plus a manifest of their schemas."""

    def __init__(self, out: Path):
        self.out = out
        out.mkdir(parents=True, exist_ok=True)
        self.files = {}

    def csv(self, name: str, schema: str, rows) -> Path:
        path = write_rows(self.out / f"{name}.csv", rows, SCHEMAS[schema])
        self.files[path.name] = {"schema": schema, "version": SCHEMA_VERSION,
                                 "columns": SCHEMAS[schema]}
        return path

    def close(self):
        (self.out / "manifest.json").write_text(json.dumps(self.files, indent=2, sort_keys=True) + "\n")


def _render(rows, schema: str, fmt: str) -> str:
    cols = SCHEMAS[schema]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        return buf.getvalue()
    cells = [[_short(r.get(c)) for c in cols] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(cols)]
    fmt_row = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt_row.format(*cols), fmt_row.format(*("-" * w for w in widths))]
    lines += [fmt_row.format(*row) for row in cells]
    return "\n".join(lines) + "\n"


def _short(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return "" if v is None else str(v)


# -- subcommands -----------------------------------------------------------------


def cmd_sweep(cfg: ExperimentConfig, w: Writer, args) -> int:
    res = experiments.run_sweep(cfg)
    for (cl, cr), rows in res.curves.items():
        w.csv(f"sweep_cl{cl}_cr{cr}", "sweep_curve", rows)
    w.csv("sweep_summary", "sweep_summary", res.summary)
    if not args.no_plots:
        plots.plot_sweep(res, w.out / "sweep.png")
    print(_render(res.summary, "sweep_summary", args.format), end="")
    return EXIT_OK


def cmd_calibrate(cfg: ExperimentConfig, w: Writer, args) -> int:
    res = experiments.run_calibrate(cfg, args.jobs)
    w.csv("sensitivity_points", "sensitivity_points", res.rows)
    w.csv("sensitivity_fit", "sensitivity_fit", res.fit.to_rows())
    summary = [{"slope_per_f": res.fit.slope_, "c_tot_recovered_f": res.fit.c_tot_,
                "c_tot_configured_f": res.c_tot_configured,
                "relative_error": res.relative_error, "r2": res.fit.r2_}]
    w.csv("sensitivity_summary", "sensitivity_summary", summary)
    if not args.no_plots:
        plots.plot_calibration(res, w.out / "sensitivity.png")
    print(_render(summary, "sensitivity_summary", args.format), end="")
    return EXIT_OK


def cmd_resolution(cfg: ExperimentConfig, w: Writer, args) -> int:
    res = experiments.run_resolution(cfg, args.jobs)
    w.csv("resolution", "resolution", res.rows + [res.anchor | {"estimator": "fft-snr-anchor"}])
    fits = [{"method": m, "exponent": f.exponent_, "a_f_sqrt_s": f.a_, "sc_f_per_sqrt_hz": f.sc_,
             "sc_configured_f_per_sqrt_hz": res.sc_configured, "white_regime": f.white_}
            for m, f in res.fits.items()]
    w.csv("resolution_fit", "resolution_fit", fits)
    if not args.no_plots:
        plots.plot_resolution(res, w.out / "resolution.png")
    for f in fits:
        if not f["white_regime"]:
            log.warning("method %s exponent %.3f outside the white-noise band", f["method"],
                        f["exponent"])
    print(_render(res.rows + [res.anchor], "resolution", args.format), end="")
    if fits:
        print(_render(fits, "resolution_fit", args.format), end="")
    return EXIT_OK


def cmd_qcap(cfg: ExperimentConfig, w: Writer, args) -> int:
    if not cfg.dut.fets:
        raise ConfigError("dut.fets: qcap needs a FET device")
    res = experiments.run_qcap(cfg, args.jobs)
    w.csv("qcap_map", "qcap_map", res.map_rows)
    w.csv("qcap_tracks", "qcap_tracks", res.track_rows)
    w.csv("qcap_integrated", "qcap_integrated", res.integrated_rows)
    w.csv("qcap_smear", "qcap_smear", res.smear_rows)
    if not args.no_plots:
        plots.plot_qcap(res, w.out / "qcap.png")
    betas = {}
    for r in res.track_rows:
        betas[(r["dv_v"], r["peak"])] = r
    print(_render(list(betas.values()), "qcap_tracks", args.format), end="")
    return EXIT_OK


def cmd_plan(cfg: ExperimentConfig, w: Writer, args) -> int:
    res = experiments.run_plan(cfg)
    w.out.joinpath("plan_footprint.csv").write_text(planner.report_csv(res.reports))
    w.files["plan_footprint.csv"] = {"schema": "plan_footprint", "version": SCHEMA_VERSION,
                                     "columns": SCHEMAS["plan_footprint"]}
    w.csv("plan_density", "plan_density", res.density)
    p = res.allocation
    summary = [{"n": p.n, "m": p.m, "bandwidth_hz": p.bandwidth, "readout_time_s": p.readout_time,
                "spacing_hz": p.spacing, "channels": len(p.frequencies),
                "power_per_qubit_w": res.power_per_qubit}]
    w.csv("plan_summary", "plan_summary", summary)
    w.csv("plan_channels", "plan_channels",
          [{"channel": i, "f_hz": f} for i, f in enumerate(p.frequencies)])
    w.csv("plan_presets", "plan_presets", res.presets)
    (w.out / "plan_table.txt").write_text(planner.report_table(res.reports))
    if args.format == "table":
        print(planner.report_table(res.reports), end="")
    else:
        print(planner.report_csv(res.reports), end="")
    print(_render(res.density, "plan_density", args.format), end="")
    print(_render(summary, "plan_summary", args.format), end="")
    return EXIT_OK


COMMANDS = {
    "sweep": (cmd_sweep, "amplitude/phase sweeps and resonance summary per bank code"),
    "calibrate": (cmd_calibrate, "switched-capacitor sensitivity fit recovering C_tot"),
    "resolution": (cmd_resolution, "capacitance resolution vs integration time"),
    "qcap": (cmd_qcap, "dC/dV spectroscopy maps and back-gate coupling slopes"),
    "plan": (cmd_plan, "multiplexing, footprint and power scaling tables"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="impedancemetry", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML experiment config (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed, overrides the config")
    common.add_argument("--out", type=Path, help=f"output directory (overrides ${OUTPUT_ENV})")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("--format", choices=("csv", "table"), default="table",
                        help="stdout rendering of the summary")
    common.add_argument("--no-plots", action="store_true", help="skip PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=helptext)
    dump = sub.add_parser("dump-config", parents=[common], help="print the effective config")
    dump.set_defaults(dump=True)
    return parser


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({})
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must fit in 64 bits")
        cfg = replace(cfg, seed=args.seed)
    out = args.out or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    return replace(cfg, output_dir=str(out))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _effective_config(args)
        if args.command == "dump-config":
            print(dump_config(cfg), end="")
            return EXIT_OK
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        writer = Writer(Path(cfg.output_dir))
        (writer.out / "config.yaml").write_text(dump_config(cfg))
        code = COMMANDS[args.command][0](cfg, writer, args)
        writer.close()
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (UnstableTankError, planner.InfeasiblePlanError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (FitError, CalibrationError) as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT


if __name__ == "__main__":
    sys.exit(main())
