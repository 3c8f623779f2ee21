import json
import subprocess
import sys

import pytest

from dampinglab.cli import main
from dampinglab.runner import DEFAULTS, ConfigError, Row, load_config, report_table, run_experiment


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_nested_and_dotted_keys(tmp_path):
    a = load_config(write(tmp_path, "lambda: -1.0\nt_grid: {lo: 10.0, points: 9}\n"))
    b = load_config(write(tmp_path, "lambda: -1.0\nt_grid.lo: 10.0\nt_grid.points: 9\n", "b.yaml"))
    assert a == b
    assert a["t_grid.hi"] == DEFAULTS["t_grid.hi"]


def test_bad_configs(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, ""))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "lamda: -0.5\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "mu: [1, 2\n"))
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "t_grid: {spacing: linear}\n"))


def test_empty_config_is_usage_error(tmp_path):
    path = write(tmp_path, "")
    with pytest.raises(SystemExit) as exc:
        main(["zones", "--config", str(path), "--out", str(tmp_path)])
    assert exc.value.code != 0
    with pytest.raises(SystemExit) as exc:
        main(["zones"])
    assert exc.value.code != 0


def test_unknown_experiment(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment({"mu": 1.0}, tmp_path, "spectra")


def test_row_semantics():
    assert Row("a", -0.375, -0.38, 0.03).passed
    assert not Row("a", -0.375, -0.42, 0.03).passed
    assert Row("b", 0.0, 1e-9, 1e-6, "max").passed
    assert not Row("c", 0.0, 0.1, 0.5, "min").passed
    assert not Row("d", 0.0, float("nan"), 1.0).passed
    table = report_table([Row("a", -0.375, -0.38, 0.03)])
    assert "| a | -0.375 | -0.38 | ±0.03 | PASS |" in table


def test_zones_outputs_and_determinism(tmp_path):
    cfg = write(tmp_path, "lambda: -0.5\nt_grid: {lo: 1.0, hi: 1.0e6, points: 13}\n")
    assert main(["zones", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["zones", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "zones" / "zones.csv").read_bytes()
    b = (tmp_path / "b" / "zones" / "zones.csv").read_bytes()
    assert a == b
    man = json.loads((tmp_path / "a" / "zones" / "manifest.json").read_text())
    assert man["status"] == "PASS" and man["seed"] == 0 and "wall_time" in man and "version" in man
    assert man["config"]["lambda"] == -0.5
    assert "PASS" in (tmp_path / "a" / "zones" / "report.md").read_text()


def test_gronwall_and_report(tmp_path):
    cfg = write(tmp_path, "gronwall: {count: 10}\n")
    out = tmp_path / "runs"
    assert main(["gronwall", "--config", str(cfg), "--out", str(out), "--seed", "4"]) == 0
    assert main(["report", "--out", str(out)]) == 0
    assert "## gronwall" in (out / "report.md").read_text()
    assert main(["report", "--out", str(tmp_path / "nothing")]) == 2


def test_failed_rows_give_nonzero_exit(tmp_path):
    # the exponent tolerance is read from config; zero tolerance cannot pass
    cfg = write(tmp_path, "lambda: -1.0\nt_grid: {lo: 1.0e2, hi: 1.0e6, points: 9}\ntol: {slope: 0.0}\nxi: [0.1]\n")
    assert main(["residuals", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    man = json.loads((tmp_path / "residuals" / "manifest.json").read_text())
    assert man["status"] == "FAIL"


def test_error_keeps_partial_results(tmp_path):
    cfg = {"lambda": -0.5, "n": 3, "profile": {"kind": "gaussian"}, "t_grid": {"lo": 1.0, "hi": 1.0, "points": 2}}
    with pytest.raises(Exception):
        run_experiment(cfg, tmp_path, "green-verify")
    man = json.loads((tmp_path / "green-verify" / "manifest.json").read_text())
    assert man["status"] == "error" and man["error"]


def test_linear_decay_pipeline(tmp_path):
    cfg = write(tmp_path, "lambda: -0.5\nn: 3\nt_grid: {lo: 1.0e2, hi: 1.0e6, points: 13}\n")
    assert main(["linear-decay", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    report = (tmp_path / "linear-decay" / "report.md").read_text()
    assert "| v norm exponent | -0.375 |" in report


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "dampinglab", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for name in ("linear-decay", "wave-decay", "green-verify", "zones", "residuals", "convolution",
                 "gronwall", "nonlinear", "report"):
        assert name in out.stdout
