import csv
import json

import pytest
import yaml

from impedancemetry import cli

SMALL_QCAP = {
    "noise": {"white_phase": "2 mrad/sqrt(Hz)"},
    "qcap": {"points": 41, "vbgs": ["5.8 V", "6.0 V", "6.2 V"], "dvs": ["3.1 mV"], "tint2": "5 ms"},
}
SMALL_RESOLUTION = {
    "noise": {"input_referred": "3.7 aF/sqrt(Hz)", "flicker_corner": "300 Hz"},
    "resolution": {"tints": ["1 us", "10 us", "100 us", "1 ms"], "repeats": 2,
                   "max_periods": 40, "t2s": ["1 ms", "3 ms", "10 ms", "100 ms"], "windows": 4,
                   "horizon_tints": ["1 ms", "10 ms"], "horizon_duration": "0.5 s"},
}


def _write_cfg(tmp_path, raw, name="cfg.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(raw))
    return path


def _run(argv):
    return cli.main([str(a) for a in argv])


def _header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_plan_outputs_and_golden_headers(tmp_path, capsys):
    out = tmp_path / "plan"
    assert _run(["plan", "--out", out, "--format", "csv"]) == cli.EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    for name, entry in manifest.items():
        assert _header(out / name) == cli.SCHEMAS[entry["schema"]]
        assert entry["version"] == cli.SCHEMA_VERSION
    assert "110.100001" in capsys.readouterr().out
    rows = list(csv.DictReader(open(out / "plan_summary.csv")))
    assert float(rows[0]["power_per_qubit_w"]) == 8.5e-6
    assert (out / "config.yaml").exists()


def test_sweep_headers(tmp_path):
    out = tmp_path / "sweep"
    cfg = _write_cfg(tmp_path, {"sweep": {"points": 21, "cl_codes": [0], "cr_codes": [0, 6]}})
    assert _run(["sweep", "--config", cfg, "--out", out, "--no-plots"]) == cli.EXIT_OK
    assert _header(out / "sweep_summary.csv") == cli.SCHEMAS["sweep_summary"]
    assert _header(out / "sweep_cl0_cr6.csv") == cli.SCHEMAS["sweep_curve"]
    assert not (out / "sweep.png").exists()


def test_plots_written(tmp_path):
    out = tmp_path / "sweep"
    cfg = _write_cfg(tmp_path, {"sweep": {"points": 11, "cl_codes": [0], "cr_codes": [0]}})
    assert _run(["sweep", "--config", cfg, "--out", out]) == cli.EXIT_OK
    assert (out / "sweep.png").stat().st_size > 0


def test_exit_code_config_error(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"plan": {"m": 0}})
    assert _run(["plan", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_exit_code_unknown_key(tmp_path):
    cfg = _write_cfg(tmp_path, {"tank": {"wrong": 1}})
    assert _run(["sweep", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_CONFIG


def test_exit_code_bad_jobs(tmp_path):
    assert _run(["plan", "--jobs", 0, "--out", tmp_path / "x"]) == cli.EXIT_CONFIG


def test_exit_code_infeasible_plan(tmp_path, capsys):
    cfg = _write_cfg(tmp_path, {"plan": {"n": 2000}})
    assert _run(["plan", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_INFEASIBLE
    assert "infeasible" in capsys.readouterr().err


def test_exit_code_unstable_tank(tmp_path):
    cfg = _write_cfg(tmp_path, {"tank": {"cr_code": 15}})
    assert _run(["resolution", "--config", cfg, "--out", tmp_path / "x"]) == cli.EXIT_INFEASIBLE


def test_exit_code_fit_failure(tmp_path):
    # 1 to 4 us falls short of the two decades the fit requires
    raw = {"noise": {"input_referred": "3.7 aF/sqrt(Hz)"},
           "resolution": {"tints": ["1 us", "2 us", "3 us", "4 us"], "repeats": 1, "max_periods": 20,
                          "t2s": ["1 ms", "2 ms", "3 ms", "4 ms"], "windows": 4,
                          "horizon_tints": ["1 ms"], "horizon_duration": "0.1 s"}}
    cfg = _write_cfg(tmp_path, raw)
    assert _run(["resolution", "--config", cfg, "--out", tmp_path / "x", "--no-plots"]) == cli.EXIT_FIT


def test_output_dir_env_and_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert _run(["plan"]) == cli.EXIT_OK
    assert (tmp_path / "env" / "plan_summary.csv").exists()
    assert _run(["plan", "--out", tmp_path / "flag"]) == cli.EXIT_OK
    assert (tmp_path / "flag" / "plan_summary.csv").exists()


def test_dump_config_round_trips(tmp_path, capsys):
    assert _run(["dump-config", "--seed", 9]) == cli.EXIT_OK
    text = capsys.readouterr().out
    path = tmp_path / "c.yaml"
    path.write_text(text)
    assert _run(["dump-config", "--config", path]) == cli.EXIT_OK
    assert capsys.readouterr().out == text
    assert "seed: 9" in text


def test_seed_out_of_range(tmp_path):
    assert _run(["plan", "--seed", 2**64, "--out", tmp_path]) == cli.EXIT_CONFIG


def _csv_bytes(out):
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_qcap_determinism_across_jobs(tmp_path):
    cfg = _write_cfg(tmp_path, SMALL_QCAP)
    for jobs in (1, 3):
        assert _run(["qcap", "--config", cfg, "--out", tmp_path / f"j{jobs}", "--jobs", jobs,
                     "--seed", 42, "--no-plots"]) == cli.EXIT_OK
    a, b = _csv_bytes(tmp_path / "j1"), _csv_bytes(tmp_path / "j3")
    assert a and a == b
    assert _header(tmp_path / "j1" / "qcap_map.csv") == cli.SCHEMAS["qcap_map"]


def test_resolution_determinism_and_seed_dependence(tmp_path):
    cfg = _write_cfg(tmp_path, SMALL_RESOLUTION)
    for name, jobs, seed in (("a", 1, 5), ("b", 4, 5), ("c", 1, 6)):
        assert _run(["resolution", "--config", cfg, "--out", tmp_path / name, "--jobs", jobs,
                     "--seed", seed, "--no-plots"]) == cli.EXIT_OK
    a, b, c = (_csv_bytes(tmp_path / n) for n in "abc")
    assert a == b
    assert a["resolution.csv"] != c["resolution.csv"]
    assert _header(tmp_path / "a" / "resolution_fit.csv") == cli.SCHEMAS["resolution_fit"]


def test_noiseless_resolution_reports_saturation(tmp_path):
    raw = {"resolution": SMALL_RESOLUTION["resolution"]}
    cfg = _write_cfg(tmp_path, raw)
    out = tmp_path / "r"
    assert _run(["resolution", "--config", cfg, "--out", out, "--no-plots"]) == cli.EXIT_OK
    rows = list(csv.DictReader(open(out / "resolution.csv")))
    assert rows and all(r["saturated"] == "true" for r in rows)
    assert list(csv.DictReader(open(out / "resolution_fit.csv"))) == []


@pytest.mark.parametrize("bad", [["sweep", "--format", "xml"], ["nonsense"]])
def test_argparse_errors_exit_2(bad):
    with pytest.raises(SystemExit) as exc:
        cli.main(bad)
    assert exc.value.code == 2
