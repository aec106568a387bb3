import csv
import json

import numpy as np
import pytest

from robust_mfg.cli import run

CROWD = ["--crowd", "--c", "1e-7", "--mu0", "0.2,0.1,0.05,0.25,0.4", "--T", "2"]


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_sweep_example(tmp_path):
    code = run(["sweep", *CROWD, "--lambdas", "0,0.25,0.3333333333,0.5,1", "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "sweep.csv")
    header = open(tmp_path / "sweep.csv").readline().strip().split(",")
    assert header == ["lambda", "V"] + [f"mu1_{k}" for k in range(5)] + [f"muT_{k}" for k in range(5)] + [
        "iterations", "converged"]
    V = [float(r["V"]) for r in rows]
    assert all(b <= a for a, b in zip(V, V[1:]))
    kernels = read_csv(tmp_path / "kernels.csv")
    policies = read_csv(tmp_path / "policies.csv")
    assert len(kernels) == 5 * 2 * 5 * 3 and len(policies) == 5 * 2 * 5
    assert set(kernels[0]) == {"lambda", "t", "s", "a", "p_0", "p_1", "p_2", "p_3", "p_4"}


def test_fraction_lambdas(tmp_path):
    assert run(["sweep", *CROWD, "--lambdas", "1/3", "--out", str(tmp_path)]) == 0
    (row,) = read_csv(tmp_path / "sweep.csv")
    assert float(row["lambda"]) == 1 / 3


def test_solve_writes_equilibrium(tmp_path):
    assert run(["solve", *CROWD, "--lambda", "1/4", "--out", str(tmp_path)]) == 0
    eq = json.loads((tmp_path / "equilibrium.json").read_text())
    assert eq["converged"] and eq["fixed_point"]["passed"]
    assert max(eq["residuals"].values()) <= 1e-8


def test_non_convergence_exit_code(tmp_path):
    code = run(["solve", *CROWD, "--lambda", "0.5", "--max-iter", "1", "--out", str(tmp_path)])
    assert code == 2
    assert (tmp_path / "equilibrium.json").exists()


def test_evaluate(tmp_path):
    pol = tmp_path / "policy.json"
    pol.write_text(json.dumps({"policy": np.full((2, 5, 3), 1 / 3).tolist()}))
    assert run(["evaluate", *CROWD, "--lambda", "0.25", "--policy", str(pol), "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "evaluation.json").read_text())
    assert out["flow_source"] == "equilibrium"
    assert out["value"] < 3.6736706507965526
    pol.write_text(json.dumps({"policy": np.full((2, 5, 3), 0.5).tolist()}))
    assert run(["evaluate", *CROWD, "--policy", str(pol), "--out", str(tmp_path)]) == 1


def test_invalid_inputs_exit_1(tmp_path, capsys):
    assert run(["solve", *CROWD, "--lambda", "-1", "--out", str(tmp_path)]) == 1
    assert run(["solve", "--out", str(tmp_path)]) == 1
    assert run(["bogus"]) == 1
    assert run(["sweep", *CROWD, "--lambdas", "0,abc", "--out", str(tmp_path)]) == 1
    bad = tmp_path / "game.json"
    bad.write_text(json.dumps({"states": [0, 1]}))
    assert run(["solve", "--config", str(bad), "--out", str(tmp_path)]) == 1
    assert "actions: missing required field" in capsys.readouterr().err


def test_thread_env(tmp_path, monkeypatch):
    monkeypatch.setenv("ROBUST_MFG_THREADS", "0")
    assert run(["sweep", *CROWD, "--lambdas", "0", "--out", str(tmp_path)]) == 1
    monkeypatch.setenv("ROBUST_MFG_THREADS", "3")
    assert run(["sweep", *CROWD, "--lambdas", "0,1", "--out", str(tmp_path)]) == 0


def test_validate(tmp_path):
    assert run(["validate", *CROWD, "--lambda", "1", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "validation.json").read_text())
    assert rep["ok"] and rep["reward_bound"] == pytest.approx(4.25 + 16.1181, abs=1e-4)


def test_simulate_matches_exact_value(tmp_path):
    assert run(["simulate", *CROWD, "--lambda", "0", "--N", "2", "--paths", "100000", "--seed", "7",
                "--out", str(tmp_path / "sim")]) == 0
    assert run(["nash-gap", *CROWD, "--lambda", "0", "--N", "2", "--out", str(tmp_path / "gap")]) == 0
    (sim,) = read_csv(tmp_path / "sim" / "nagent.csv")
    (gap,) = read_csv(tmp_path / "gap" / "nagent.csv")
    assert list(sim) == ["N", "J_mc", "stderr", "J_exact", "nash_gap", "certified"]
    assert abs(float(sim["J_mc"]) - float(gap["J_exact"])) <= 3 * float(sim["stderr"])
    assert gap["certified"] == "true" and float(gap["nash_gap"]) >= -1e-10


def test_nash_gap_rejects(tmp_path):
    assert run(["nash-gap", *CROWD, "--N", "4", "--out", str(tmp_path)]) == 1
    assert run(["nash-gap", *CROWD, "--budget", "100", "--out", str(tmp_path)]) == 1


def test_diagnose(tmp_path):
    assert run(["diagnose", *CROWD, "--lambda", "0.25", "--N", "2,8", "--paths", "2000", "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "chaos.csv")
    assert [(r["N"], r["t"]) for r in rows] == [("2", "0"), ("2", "1"), ("8", "0"), ("8", "1")]
