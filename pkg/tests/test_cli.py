import json
import subprocess
import sys

import pytest

from nanosqueeze import cli

TINY = {
    "name": "tiny",
    "pipeline": "amplitude_map",
    "geometry": {"radius_nm": [0, 60]},
    "emitter": {"lambda_nm": [550]},
}


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def test_run_writes_outputs(config, tmp_path):
    out = tmp_path / "out"
    assert cli.main(["run", str(config), "--out-dir", str(out), "-q"]) == cli.EXIT_OK
    assert sorted(p.name for p in out.iterdir()) == ["tiny.csv", "tiny.json"]
    lines = (out / "tiny.csv").read_text().splitlines()
    assert lines[0] == "lambda_nm,radius_nm,amplitude_ratio_theta,error_code"
    assert len(lines) == 3


def test_format_and_tol_flags(config, tmp_path):
    out = tmp_path / "o"
    code = cli.main(["run", str(config), "--out-dir", str(out), "--format", "json", "--tol", "1e-6",
                     "--threads", "2", "-q"])
    assert code == cli.EXIT_OK
    doc = json.loads((out / "tiny.json").read_text())
    assert [p.name for p in out.iterdir()] == ["tiny.json"]
    assert doc["metadata"]["config_sha256"]


def test_validate_prints_normalized(config, capsys):
    assert cli.main(["validate", str(config), "--tol", "1e-7"]) == cli.EXIT_OK
    doc = json.loads(capsys.readouterr().out)
    assert doc["numerics"]["tol"] == 1e-7 and doc["output"]["formats"] == ["csv", "json"]


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["validate", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["run", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    assert cli.main(["preset", "nope"]) == cli.EXIT_CONFIG
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({**TINY, "numerics": {"tol": 5}}))
    assert cli.main(["run", str(wrong)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_threads_must_be_positive(config, tmp_path):
    assert cli.main(["run", str(config), "--out-dir", str(tmp_path), "--threads", "0"]) == cli.EXIT_CONFIG


def test_numerical_failure_exit(tmp_path):
    cfg = {**TINY, "geometry": {"radius_nm": [60], "detection": {"kind": "D2"}},
           "numerics": {"tol": 1e-12, "n_max_cap": 3}}
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg))
    out = tmp_path / "out"
    assert cli.main(["run", str(p), "--out-dir", str(out), "-q"]) == cli.EXIT_NUMERICAL
    rows = (out / "tiny.csv").read_text().splitlines()
    assert rows[1].endswith(",,1")


def test_io_error_exit(config, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["run", str(config), "--out-dir", str(blocker / "sub"), "-q"]) == cli.EXIT_IO


def test_console_script_module(config, tmp_path):
    res = subprocess.run([sys.executable, "-m", "nanosqueeze.cli", "validate", str(config)],
                         capture_output=True, text=True)
    assert res.returncode == 0 and json.loads(res.stdout)["name"] == "tiny"
    res = subprocess.run([sys.executable, "-m", "nanosqueeze.cli", "preset", "fig1c", "--out-dir", str(tmp_path),
                          "--format", "csv", "-q"], capture_output=True, text=True)
    assert res.returncode == 0 and (tmp_path / "fig1c.csv").is_file()
