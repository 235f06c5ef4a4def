import json

import numpy as np
import pytest

from nvreg.calibration import MeasuredTrace
from nvreg.cli import main, parse_range
from nvreg.dynamics import SampledField
from nvreg.optimizers import OptimizationResult, evaluate_shape
from nvreg.robustness import RobustnessMap


def run(tmp_path, name, *argv):
    out = tmp_path / name
    code = main([*argv, "--out", str(out), "--threads", "1"])
    return code, out


def test_parse_range():
    assert parse_range("3..16") == [float(t) for t in range(3, 17)]
    assert parse_range("1..2:0.5") == [1.0, 1.5, 2.0]
    assert parse_range("4,8,16") == [4.0, 8.0, 16.0]


def test_simulate_default_stirap(tmp_path):
    code, out = run(tmp_path, "sim", "simulate", "--T", "4", "--samples", "201")
    assert code == 0
    traj = (out / "trajectory.csv").read_text().splitlines()
    assert traj[0].startswith("time_us,pop_1")
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 0 and man["version"] and man["args"]["T"] == 4.0
    assert "D" in man["system"]


def test_optimize_round_trip_and_determinism(tmp_path):
    args = ["optimize", "--method", "pm", "--T", "4", "--seed", "7", "--trials", "1", "--max-evals", "40"]
    code, a = run(tmp_path, "a", *args)
    assert code == 0
    code, b = run(tmp_path, "b", *args)
    for name in ("result.json", "trace.csv", "field.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    res = OptimizationResult.load(a / "result.json")
    assert evaluate_shape(res.best_shape, 4.0) == res.best_fidelity
    code, s = run(tmp_path, "s", "simulate", "--shape", str(a / "result.json"))
    assert code == 0
    summary = json.loads((s / "manifest.json").read_text())["summary"]
    assert summary["fidelity"] == pytest.approx(res.best_fidelity, abs=1e-9)


def test_sweep_table(tmp_path):
    code, out = run(tmp_path, "sw", "sweep", "--method", "crab,pm", "--T-range", "3,4", "--trials", "1", "--max-evals", "30")
    assert code == 0
    rows = (out / "sweep.csv").read_text().splitlines()
    assert rows[0] == "T_us,crab,pm,best" and len(rows) == 3


def test_robustness_map_and_estimate(tmp_path):
    code, o = run(tmp_path, "o", "optimize", "--method", "pm", "--T", "4", "--trials", "1", "--max-evals", "30")
    grid = ["--n-delta", "5", "--n-kappa", "6"]
    code, m = run(tmp_path, "m", "robustness", "map", "--shape", str(o / "result.json"), *grid)
    assert code == 0
    rm = RobustnessMap.from_csv(m / "map.csv")
    assert rm.values.shape == (5, 6) and rm.provenance == "brute"
    code, e = run(tmp_path, "e", "robustness", "estimate", "--shape", str(o / "result.json"), *grid, "--seed", "2")
    assert code == 0
    assert len(RobustnessMap.from_csv(e / "map.csv").samples) == 16


def test_calibrate(tmp_path):
    x = np.linspace(0, 1, 11)
    MeasuredTrace(x, 40.4 * x + 1.0).to_csv(tmp_path / "rabi.csv")
    code, out = run(tmp_path, "c", "calibrate", "--fit", f"rabi={tmp_path / 'rabi.csv'}")
    assert code == 0
    rep = json.loads((out / "calibration.json").read_text())
    assert rep["fits"]["rabi"]["y_on_x"]["a"] == pytest.approx(40.4)


def test_calibrate_trace(tmp_path):
    code, f = run(tmp_path, "f", "export", "--T", "4", "--rabi-per-volt", "40.4")
    assert code == 0
    field = SampledField.from_csv(f / "field.csv")
    MeasuredTrace(field.times, 0.5 * field.omega_p + 0.1).to_csv(tmp_path / "scope.csv")
    code, out = run(tmp_path, "c", "calibrate", "--trace", str(tmp_path / "scope.csv"), "--field", str(f / "field.csv"))
    assert code == 0
    rep = json.loads((out / "calibration.json").read_text())
    assert rep["traces"][0]["discrepancy"] < 1e-9
    assert (f / "awg.csv").read_text().startswith("time_us,pump_volts,stokes_volts")


def test_error_record(tmp_path):
    code, out = run(tmp_path, "err", "optimize", "--method", "nope", "--T", "4")
    assert code == 2
    rec = json.loads((out / "error.json").read_text())
    assert rec["error"] == "CliError" and "nope" in rec["message"]


def test_config_file(tmp_path):
    cfg = tmp_path / "sys.json"
    cfg.write_text(json.dumps({"Bx": 50.0}))
    code, out = run(tmp_path, "cfg", "simulate", "--T", "2", "--samples", "101", "--config", str(cfg))
    assert code == 0
    assert json.loads((out / "manifest.json").read_text())["system"]["Bx"] == 50.0
