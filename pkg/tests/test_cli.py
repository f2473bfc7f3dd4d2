import json
import os
import subprocess
import sys

import pytest

from anosov_lab.cli import exit_status, main, parse_model_arg
from anosov_lab.errors import ValidationError
from anosov_lab.rigidity_experiments import Verdict

SMALL = """
[[experiment]]
name = "small"
kind = "inequality"
seed = 2

[experiment.model]
kind = "hyperbolic"

[experiment.grid]
count = 3

[[experiment]]
name = "sphere"
kind = "exponent_rigidity"

[experiment.model]
kind = "sphere"
"""


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return str(path)


def test_parse_model_arg():
    assert parse_model_arg("hyperbolic:c=2") == {"kind": "hyperbolic", "c": 2.0}
    assert parse_model_arg("warped:f=cosh_mix,weight=0.25") == {"kind": "warped", "f": "cosh_mix", "weight": 0.25}
    with pytest.raises(ValidationError):
        parse_model_arg("hyperbolic:c")
    with pytest.raises(ValidationError):
        parse_model_arg("hyperbolic:radius=1")


def test_probe_hyperbolic(capsys):
    assert main(["probe", "hyperbolic:c=2", "--at", "0", "1"]) == 0
    out = capsys.readouterr().out
    assert "K = -4" in out
    assert "Gamma^0_01 = -1" in out


def test_probe_three_dimensional(capsys):
    assert main(["probe", "hyperbolic:dim=3", "--at", "0", "0", "1"]) == 0
    out = capsys.readouterr().out
    assert out.count("= -1\n") >= 3


def test_probe_outside_chart(capsys):
    assert main(["probe", "hyperbolic", "--at", "0", "-1"]) == 1
    assert "PointOutsideChart" in capsys.readouterr().err


def test_orbit_csv(capsys):
    assert main(["orbit", "hyperbolic", "--p", "0", "1", "--v", "0", "1", "--T", "2", "--out", "-"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# schema=orbit/1")
    header = lines[1].split(",")
    last = dict(zip(header, map(float, lines[-1].split(","))))
    assert last["t"] == pytest.approx(2.0)
    assert last["x1"] == pytest.approx(2.718281828459045 ** 2, rel=1e-9)


def test_orbit_default_file(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("LAB_OUTPUT_DIR", str(tmp_path))
    assert main(["orbit", "hyperbolic", "--p", "0", "1", "--angle", "0.3", "--T", "1"]) == 0
    assert (tmp_path / "orbit-hyperbolic-c1.csv").exists()


def test_orbit_partial_exit(capsys):
    code = main(["orbit", "custom:g=euclidean,radius=1", "--p", "0", "0", "--v", "1", "0", "--T", "5", "--out", "-"])
    assert code == 1
    assert "left the chart" in capsys.readouterr().err


def test_riccati_reports_gap(capsys):
    assert main(["riccati", "hyperbolic", "--p", "0", "1", "--v", "0", "1", "--T-back", "40", "--out", "-"]) == 0
    cap = capsys.readouterr()
    assert "cauchy gap" in cap.err and "||U+|| = 1" in cap.err
    rows = cap.out.splitlines()
    assert rows[1] == "T_back,U00,cauchy_gap"
    assert float(rows[-1].split(",")[1]) == pytest.approx(1.0, abs=1e-8)


def test_riccati_not_converged(capsys):
    code = main(["riccati", "hyperbolic", "--p", "0", "1", "--v", "0", "1", "--T-back", "6", "--tol", "1e-14"])
    assert code == 1
    assert "Cauchy gap" in capsys.readouterr().err


def test_run_paper_suite(tmp_path, capsys):
    assert main(["run", "paper-suite", "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "inequality: InequalityHolds" in out
    assert "summary: 5 experiments" in out
    assert len(list(tmp_path.glob("*.json"))) == 5
    doc = json.loads((tmp_path / "inequality-warped-cosh_mix-weight0.25-0.json").read_text())
    assert doc["flags"]["strict"]


def test_run_nothing_to_do(tmp_path, capsys):
    cfg = tmp_path / "empty.toml"
    cfg.write_text("parallel_jobs = 1\n")
    assert main(["run", str(cfg), "--output-dir", str(tmp_path / "out")]) == 0
    assert "nothing to do" in capsys.readouterr().err
    assert not (tmp_path / "out").exists()


def test_run_unwritable_output(tmp_path, small_config, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["run", small_config, "--output-dir", str(blocker / "sub")]) == 3
    assert "not writable" in capsys.readouterr().err
    assert sorted(os.listdir(tmp_path)) == ["file", "small.toml"]


def test_run_inconclusive_exit_codes(tmp_path, small_config, capsys):
    assert main(["run", small_config, "--output-dir", str(tmp_path / "a")]) == 1
    out = capsys.readouterr().out
    assert "failed: sphere: Inconclusive" in out
    assert main(["run", small_config, "--output-dir", str(tmp_path / "b"), "--warn-only"]) == 0


def test_run_seed_override_and_env(tmp_path, small_config, monkeypatch, capsys):
    monkeypatch.setenv("LAB_OUTPUT_DIR", str(tmp_path / "env"))
    main(["run", small_config, "--seed", "9", "--warn-only"])
    names = sorted(os.listdir(tmp_path / "env"))
    assert "small-hyperbolic-c1-9.json" in names
    assert "sphere-warped-sin-9.json" in names


def test_run_bad_config(tmp_path, capsys):
    cfg = tmp_path / "bad.toml"
    cfg.write_text(SMALL.replace("seed = 2", "sede = 2"))
    assert main(["run", str(cfg)]) == 2
    assert "experiment[0].sede" in capsys.readouterr().err
    cfg.write_text("x = = 1")
    assert main(["run", str(cfg)]) == 2
    assert main(["run", str(tmp_path / "missing.toml")]) == 2


def test_run_jobs_identical(tmp_path, small_config, capsys):
    main(["run", small_config, "--output-dir", str(tmp_path / "j1"), "--jobs", "1"])
    main(["run", small_config, "--output-dir", str(tmp_path / "j2"), "--jobs", "2"])
    for name in os.listdir(tmp_path / "j1"):
        assert (tmp_path / "j1" / name).read_bytes() == (tmp_path / "j2" / name).read_bytes()
    assert main(["run", small_config, "--jobs", "0"]) == 2


def test_exit_status_pure():
    V = Verdict
    assert exit_status([V.INEQUALITY_HOLDS, V.EQUALITY_RIGIDITY_CONSISTENT]) == 0
    assert exit_status([V.INEQUALITY_HOLDS, V.VIOLATION]) == 1
    assert exit_status([V.VIOLATION], warn_only_inconclusive=True) == 1
    assert exit_status([V.INCONCLUSIVE]) == 1
    assert exit_status([V.INCONCLUSIVE], warn_only_inconclusive=True) == 0
    assert exit_status(["InequalityHolds"], io_failures=1) == 1
    assert exit_status([]) == 0


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "anosov_lab", "probe", "sphere", "--at", "1.0", "0.5"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert "K = 1" in proc.stdout
