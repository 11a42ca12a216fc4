import csv
import json

import pytest
from click.testing import CliRunner

from nonholo.cli import main

from test_specio import SNAKE


def run(args, env=None):
    return CliRunner().invoke(main, args, env=env, catch_exceptions=False)


def report(res):
    return json.loads(res.output)


@pytest.mark.parametrize("model", ["snakeboard", "chaplygin-ball", "se2-toy"])
def test_check_passes_on_builtins(model):
    res = run(["check", "--model", model, "--samples", "4"])
    assert res.exit_code == 0, res.output
    rep = report(res)
    assert rep["passed"] and rep["schema"] == "nonholo-report/1"
    assert rep["config"]["model"] == model


def test_check_without_gauge_fails_for_ball():
    res = run(["check", "--model", "chaplygin-ball", "--samples", "4", "--no-gauge"])
    assert res.exit_code == 1
    rep = report(res)
    assert rep["basic"]["basic"] is False
    assert "skipped" in rep["jacobiator"]


def test_se2_jacobiator_skipped():
    rep = report(run(["check", "--model", "se2-toy", "--samples", "2"]))
    assert "skipped" in rep["jacobiator"]


def test_input_errors(tmp_path):
    assert run(["check", "--model", "bicycle"]).exit_code == 2
    assert run(["check"]).exit_code == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    assert run(["check", "--spec", str(bad)]).exit_code == 2
    assert run(["check", "--model", "snakeboard", "--spec", str(bad)]).exit_code == 2
    assert run(["check", "--model", "snakeboard", "--mu", "1,2", "--samples", "2"]).exit_code == 2
    assert run(["check", "--model", "snakeboard", "--samples", "2"],
               env={"NONHOLO_NUM_THREADS": "zero"}).exit_code == 2


def test_check_reports_are_deterministic():
    a = run(["check", "--model", "snakeboard", "--samples", "3", "--seed", "7"]).output
    b = run(["check", "--model", "snakeboard", "--samples", "3", "--seed", "7"]).output
    assert a == b


def test_simulate_writes_files(tmp_path):
    out = tmp_path / "run"
    res = run(["simulate", "--model", "snakeboard", "--T", "0.2", "--h", "0.01", "--out", str(out), "--oracle"])
    assert res.exit_code == 0, res.output
    rows = list(csv.reader(open(out / "trajectory.csv")))
    assert len(rows) == 22
    assert rows[0][:4] == ["t", "theta", "phi", "psi"]
    assert (out / "oracle.csv").exists()
    mon = json.loads((out / "monitor.json").read_text())
    assert mon["oracle"]["max_discrepancy"] < 1e-6
    assert mon["monitor"]["energy"]["max_drift"] < 1e-9


def test_simulate_zero_horizon(tmp_path):
    out = tmp_path / "z"
    res = run(["simulate", "--model", "chaplygin-ball", "--T", "0", "--out", str(out)])
    assert res.exit_code == 0
    assert len(list(csv.reader(open(out / "trajectory.csv")))) == 2


def test_simulate_rejects_bad_step(tmp_path):
    assert run(["simulate", "--model", "snakeboard", "--h", "0", "--out", str(tmp_path)]).exit_code == 2


def test_simulate_from_spec(tmp_path):
    spec = tmp_path / "sb.json"
    spec.write_text(json.dumps(SNAKE))
    res = run(["simulate", "--spec", str(spec), "--T", "0.1", "--h", "0.01", "--out", str(tmp_path / "o")])
    assert res.exit_code == 0
    assert report(res)["monitor"]["momentum_psi"]["max_drift"] < 1e-12


def test_hamiltonize_nonabelian_is_unsupported():
    res = run(["hamiltonize", "--model", "se2-toy", "--samples", "2"])
    assert res.exit_code == 3
    assert report(res)["feasibility"]["status"] == "unsupported"


def test_hamiltonize_ball_reports_reciprocal():
    res = run(["hamiltonize", "--model", "chaplygin-ball", "--samples", "3", "--T", "0.5"])
    rep = report(res)
    assert res.exit_code == 1
    assert not rep["candidates"]["model_factor"]["closes"]
    assert rep["candidates"]["model_factor_reciprocal"]["closes"]
    assert rep["solve"]["relative_error"]["model_factor_reciprocal"] < 1e-6
    assert rep["reparameterization"]["passed"]


def test_hamiltonize_ball_without_gauge_fails():
    res = run(["hamiltonize", "--model", "chaplygin-ball", "--samples", "2", "--no-gauge"])
    assert res.exit_code == 1
    assert "basic" in report(res)["error"]
