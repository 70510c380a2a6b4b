import csv
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from riskac import cli
from riskac.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, atomic_write, main
from riskac.driver import NumericError, RunConfig


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["run", "--config", "minimal.json", "--out", str(out)]) == EXIT_OK
    rows = list(csv.reader(open(out / "trace.csv")))
    assert rows[0] == ["n", "theta_0", "lambda", "v_x0", "u_x0", "var_hat"]
    assert len(rows) == 1 + 20
    summary = json.loads((out / "summary.json").read_text())
    assert summary["oracle_variance_final"] == 0.0
    assert (out / "oracle_checkpoints.csv").exists()
    assert "rs-spsa-g" in capsys.readouterr().out


def test_run_is_byte_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["run", "--config", "risky_safe.json", "--out", str(tmp_path / d)]) == 0
    for name in ("trace.csv", "summary.json", "oracle_checkpoints.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_acceptance_config_is_feasible(tmp_path):
    assert main(["run", "--config", "risky_safe.json", "--out", str(tmp_path)]) == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["oracle_variance_final"] <= 1.1 * s["alpha"]


def test_seed_override_changes_output(tmp_path):
    main(["run", "--config", "risky_safe.json", "--out", str(tmp_path / "a")])
    main(["run", "--config", "risky_safe.json", "--out", str(tmp_path / "b"), "--seed", "9"])
    a = (tmp_path / "a" / "trace.csv").read_text()
    assert a != (tmp_path / "b" / "trace.csv").read_text()
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["seed"] == 9


def test_json_trace_format(tmp_path):
    assert main(["run", "--config", "minimal.json", "--out", str(tmp_path), "--format", "json"]) == 0
    doc = json.loads((tmp_path / "trace.json").read_text())
    assert doc["columns"][0] == "n" and len(doc["rows"]) == 20


def test_bad_config_exits_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"algorithm": "rs-spsa-g", "schedules": {"zeta1": {"power": 0.4}}}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert not (tmp_path / "o").exists()
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == EXIT_CONFIG
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG


def test_numeric_failure_exits_3_without_partial_files(tmp_path, monkeypatch):
    def boom(config):
        raise NumericError("non-finite critic value", iteration=17)

    monkeypatch.setattr(cli, "run", boom)
    out = tmp_path / "o"
    assert main(["run", "--config", "minimal.json", "--out", str(out)]) == EXIT_NUMERIC
    assert not out.exists() or not any(out.iterdir())


def test_atomic_write_leaves_no_temp_on_failure(tmp_path):
    target = tmp_path / "x.txt"
    atomic_write(target, "first")

    with pytest.raises(TypeError):
        atomic_write(target, 123)
    assert target.read_text() == "first"
    assert [p.name for p in tmp_path.iterdir()] == ["x.txt"]


def test_oracle_command(tmp_path, capsys):
    assert main(["oracle", "--config", "risky_safe.json", "--theta", "40",
                 "--out", str(tmp_path)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["V"][0] == pytest.approx(4.5 / 0.19)
    assert (tmp_path / "oracle_discounted.json").exists()
    assert main(["oracle", "--mdp", "random5.json", "--mode", "average"]) == 0
    assert "rho" in json.loads(capsys.readouterr().out)
    assert main(["oracle", "--config", "risky_safe.json", "--theta", "1,2"]) == EXIT_CONFIG


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--draws", "20000"]) == EXIT_OK
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "group,check,value,threshold,pass"
    assert all(line.endswith("PASS") for line in lines[1:])


def test_tdcheck_reports_and_gates(tmp_path, capsys):
    code = main(["tdcheck", "--samples", "20000", "--out", str(tmp_path)])
    doc = json.loads((tmp_path / "tdcheck.json").read_text())
    assert {"v_relative_error", "u_relative_error", "sym_eigenvalues",
            "mean_field_error_curve", "tabular_fixed_point_error"} <= set(doc)
    assert max(doc["tabular_fixed_point_error"]) < 1e-8
    expected_ok = (doc["v_relative_error"] < 0.05 and doc["u_relative_error"] < 0.05
                   and max(doc["sym_eigenvalues"]) < 0)
    assert code == (EXIT_OK if expected_ok else EXIT_VERIFY)


def test_tdcheck_rejects_rank_deficient_features(tmp_path, capsys):
    phi = np.random.default_rng(0).standard_normal((5, 2))
    f = tmp_path / "phi.json"
    f.write_text(json.dumps({"phi_v": np.c_[phi, phi.sum(axis=1)].tolist()}))
    assert main(["tdcheck", "--features", f"file:{f}", "--samples", "100"]) == EXIT_CONFIG
    assert capsys.readouterr().out == ""
    assert main(["tdcheck", "--features", "random:6", "--samples", "100"]) == EXIT_CONFIG


def test_sweep_and_report(tmp_path):
    spec = tmp_path / "sweep.json"
    base = RunConfig.load(cli.bundled("average_risky_safe.json")).with_overrides(
        outer_iterations=20, test_episodes=5)
    spec.write_text(json.dumps({"base": base.to_dict(), "algorithms": ["ac", "rs-ac"],
                                "seeds": [0, 1, 2]}))
    out = tmp_path / "sw"
    assert main(["sweep", "--config", str(spec), "--out", str(out)]) == 0
    traces = sorted(p.name for p in (out / "runs").glob("*.csv"))
    assert len(traces) == 6 and (out / "aggregate.csv").exists()
    first = (out / "aggregate.csv").read_bytes()
    assert main(["sweep", "--config", str(spec), "--out", str(out), "--workers", "2"]) == 0
    assert (out / "aggregate.csv").read_bytes() == first
    assert main(["report", "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out / "report.csv")))
    assert len(rows) == 6 and {r["algorithm"] for r in rows} == {"ac", "rs-ac"}


def test_sweep_seed_override(tmp_path):
    spec = tmp_path / "sweep.json"
    base = RunConfig.load(cli.bundled("minimal.json")).with_overrides(outer_iterations=5)
    spec.write_text(json.dumps({"base": base.to_dict(), "seeds": [0, 1]}))
    assert main(["sweep", "--config", str(spec), "--out", str(tmp_path / "o"), "--seed", "40"]) == 0
    names = sorted(p.name for p in (tmp_path / "o" / "runs").glob("*.csv"))
    assert names == ["rs-spsa-g_seed40.csv", "rs-spsa-g_seed41.csv"]


def test_report_without_runs_exits_2(tmp_path):
    assert main(["report", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_bundled_configs_validate():
    for name in ("risky_safe.json", "average_risky_safe.json", "traffic_grid.json",
                 "random5_run.json", "minimal.json"):
        RunConfig.load(cli.bundled(name))
    for name in ("sweep_discounted.json", "sweep_average.json", "sweep_traffic.json"):
        base, algs, seeds = cli.load_sweep(cli.bundled(name))
        assert algs and seeds


def test_module_entry_point_and_log_level(tmp_path):
    env = dict(os.environ, RISK_AC_LOG="error")
    res = subprocess.run([sys.executable, "-m", "riskac", "run", "--config", "minimal.json",
                          "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert res.returncode == 0 and res.stderr == ""
    env["RISK_AC_LOG"] = "debug"
    res = subprocess.run([sys.executable, "-m", "riskac", "run", "--config", "nope.json"],
                         capture_output=True, text=True, env=env)
    assert res.returncode == 2 and "configuration error" in res.stderr
