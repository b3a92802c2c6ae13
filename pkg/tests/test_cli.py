import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from mogrid.cli import EXIT_INVALID, EXIT_OK, EXIT_UNCONVERGED, main
from mogrid.config import ExperimentConfig
from mogrid.dataset import synth_scenario, write_csv
from mogrid.objectives import TubeSpec, h_hat

# three households over two days, short horizon: every command runs in seconds
SMALL = {
    "households": 3,
    "days": 2,
    "N": 8,
    "horizon_k": 10,
    "steps": 6,
    "tube": [[0, 0.2, 0.4], [48, 0.6, 0.8]],
    "x0": 1.0,
}


def config_file(tmp_path, **extra):
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump({**SMALL, **extra}))
    return str(path)


def run(tmp_path, command, *args, name="out", **extra):
    out = tmp_path / name
    code = main([command, "--config", config_file(tmp_path, **extra), "--out", str(out), *args])
    return code, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_pareto_file_contract(tmp_path):
    code, out = run(tmp_path, "pareto")
    assert code == EXIT_OK
    rows = read_rows(out / "frontier.csv")
    assert rows[0] == ["kappa", "g", "h", "f_tilde", "refined", "iterations", "converged"]
    assert [r[0] for r in rows[1:]] == [f"{0.05 * i:.9g}" for i in range(21)]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["points"] == 21 and summary["monotone"]
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "pareto" and manifest["config"]["N"] == 8
    assert manifest["config_sha256"] == ExperimentConfig(**manifest["config"]).sha256()


def test_tradeoff_table(tmp_path):
    code, out = run(tmp_path, "pareto", "--tradeoff", "0.2")
    assert code == EXIT_OK
    kappas = [r[0] for r in read_rows(out / "frontier.csv")[1:]]
    assert "0.01" in kappas and "0.99" in kappas and len(kappas) == 23
    table = read_rows(out / "tradeoff_kappa0.2.csv")
    assert table[0] == ["kappa1", "L"] and table[-1][0] == "L_star"
    assert len(table) == 1 + 23 + 1
    L_star = float(table[-1][1])
    assert np.isfinite(L_star) and L_star == max(float(r[1]) for r in table[1:-1])


def test_sensitivity_files(tmp_path):
    code, out = run(tmp_path, "sensitivity", "--values", "0.2,1,2", "--kappa-grid", "0,0.5,1")
    assert code == EXIT_OK
    for v in ("0.2", "1", "2"):
        assert len(read_rows(out / f"frontier_tube_width{v}.csv")) == 4
    combined = read_rows(out / "sensitivity_tube_width.csv")
    assert len(combined) == 1 + 9
    # a wider tube never needs more slack
    h = {(r[0], r[1]): float(r[3]) for r in combined[1:]}
    for k in ("0", "0.5", "1"):
        assert h[("2", k)] <= h[("1", k)] + 1e-6 <= h[("0.2", k)] + 2e-6


def test_initial_soc_axis(tmp_path):
    code, out = run(tmp_path, "sensitivity", "--axis", "initial_soc", "--values", "0,2", "--kappa-grid", "0,1")
    assert code == EXIT_OK
    assert (out / "frontier_initial_soc0.csv").exists() and (out / "frontier_initial_soc2.csv").exists()


def test_simulate_extremes(tmp_path):
    code, out = run(tmp_path, "simulate", "--kappa", "0,1")
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    s0, s1 = summary["0"], summary["1"]
    assert s0["J2"] <= s1["J2"] + 1e-9
    assert s1["J1"] <= s0["J1"] + 1e-9
    assert s0["max_constraint_violation"] <= 1e-9
    assert len(read_rows(out / "trace_kappa0.csv")) == 1 + 6 * 4


def test_simulate_without_storage_is_baseline(tmp_path):
    code, out = run(tmp_path, "simulate", prosumer={"capacity": 0.0}, x0=0.0)
    assert code == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())["0.5"]
    w_bar = synth_scenario(0, 3, 96).w[:, :6].mean(axis=0)
    tube = TubeSpec.from_segments(SMALL["tube"], 96).slice(0, 6)
    assert summary["J2"] == pytest.approx(h_hat(w_bar, tube), rel=1e-8)


def test_admm_diagnose_rho_list(tmp_path):
    code, out = run(tmp_path, "admm-diagnose", "--rho", "0.1,0.3,1")
    report = json.loads((out / "report.json").read_text())
    assert len(report) == 3
    for rho in ("0.1", "0.3", "1"):
        rows = read_rows(out / f"admm_trace_kappa0.5_rho{rho}.csv")
        assert rows[0][:3] == ["iteration", "primal_residual", "dual_residual"]
        assert len(rows) - 1 == report[f"kappa0.5_rho{rho}"]["iterations"]
    assert code == (EXIT_OK if all(r["converged"] for r in report.values()) else EXIT_UNCONVERGED)
    conv = report["kappa0.5_rho0.3"]
    assert conv["converged"] and conv["final_f_gap"] <= 1e-3 * (1 + conv["f_hat"])


def test_budget_of_one_iteration(tmp_path):
    code, out = run(tmp_path, "admm-diagnose", "--max-iters", "1")
    assert code == EXIT_UNCONVERGED
    assert len(read_rows(out / "admm_trace_kappa0.5_rho0.3.csv")) == 2
    assert not json.loads((out / "report.json").read_text())["kappa0.5_rho0.3"]["converged"]


def test_unconverged_frontier_exits_one(tmp_path, capsys):
    code, _ = run(tmp_path, "pareto", "--max-iters", "2", "--kappa-grid", "0,0.5,1")
    assert code == EXIT_UNCONVERGED
    assert "did not converge" in capsys.readouterr().err


def test_invalid_input_exits_two(tmp_path, capsys):
    assert run(tmp_path, "pareto", kappa=1.5)[0] == EXIT_INVALID
    assert "kappa: must lie in [0, 1]" in capsys.readouterr().err
    assert run(tmp_path, "pareto", data=str(tmp_path / "missing.csv"))[0] == EXIT_INVALID
    assert run(tmp_path, "pareto", colour="blue")[0] == EXIT_INVALID
    assert "colour: unknown field" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("households: [1,\n")
    assert main(["pareto", "--config", str(bad), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    assert main(["pareto", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == EXIT_INVALID
    # the horizon runs past the end of the data
    assert run(tmp_path, "simulate", steps=200)[0] == EXIT_INVALID


def test_csv_data_source(tmp_path):
    write_csv(synth_scenario(0, 3, 96), tmp_path / "w.csv")
    code, out = run(tmp_path, "pareto", "--kappa-grid", "0,1", data=str(tmp_path / "w.csv"))
    assert code == EXIT_OK
    code, ref = run(tmp_path, "pareto", "--kappa-grid", "0,1", name="synth")
    frontier = read_rows(out / "frontier.csv")
    synth = read_rows(ref / "frontier.csv")
    for a, b in zip(frontier[1:], synth[1:]):
        assert float(a[1]) == pytest.approx(float(b[1]), rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("command,args", [
    ("pareto", ["--tradeoff", "0.3", "--trace"]),
    ("simulate", ["--kappa", "0.2,0.8", "--trace"]),
    ("sensitivity", ["--values", "0.5,3", "--kappa-grid", "0,0.5,1"]),
    ("admm-diagnose", ["--rho", "0.2,0.5"]),
])
def test_manifest_rerun_is_byte_identical(tmp_path, monkeypatch, command, args):
    monkeypatch.setenv("MOGRID_WORKERS", "1")
    code, first = run(tmp_path, command, *args)
    monkeypatch.setenv("MOGRID_WORKERS", "2")
    again = tmp_path / "again"
    code2 = main([command, "--config", str(first / "manifest.json"), "--out", str(again)])
    assert code == code2
    files = sorted(p.name for p in first.iterdir())
    assert files == sorted(p.name for p in again.iterdir())
    for name in files:
        assert (first / name).read_bytes() == (again / name).read_bytes(), name


def test_entry_point_help_and_version():
    res = subprocess.run([sys.executable, "-m", "mogrid", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "mogrid 0.1.0" in res.stdout
    res = subprocess.run([sys.executable, "-m", "mogrid", "pareto", "--bogus"], capture_output=True, text=True)
    assert res.returncode == 2
