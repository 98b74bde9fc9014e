import csv
import subprocess
import sys
from pathlib import Path

import pytest

from reinsgame import cli
from reinsgame.errors import ConvergenceError
from reinsgame.params import baseline_spec, dump_config, with_value

ROOT = Path(__file__).resolve().parents[1]
BASELINE = str(ROOT / "configs" / "baseline.yaml")


def run(*args):
    return cli.main([str(a) for a in args])


def _write(tmp_path, spec, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(dump_config(spec))
    return p


def test_validate_ok(capsys):
    assert run("validate", BASELINE) == 0
    assert "all checks pass" in capsys.readouterr().out


def test_bad_config_exit_1(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(Path(BASELINE).read_text().replace("kappa:", "kapa:"))
    assert run("validate", p) == 1
    assert "unknown key market.kapa" in capsys.readouterr().err
    assert run("validate", tmp_path / "missing.yaml") == 1


def test_validation_failure_exit_2(tmp_path, capsys):
    p = _write(tmp_path, with_value(baseline_spec(), "zbar", 0.01))
    assert run("validate", p) == 2
    assert run("equilibrium", p, "--out", tmp_path) == 2
    assert "[FAIL] feller" in capsys.readouterr().err


def test_convergence_failure_exit_3(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise ConvergenceError("retention fixed point did not converge")

    monkeypatch.setattr(cli, "solve_equilibrium", boom)
    assert run("equilibrium", BASELINE, "--out", tmp_path) == 3


def test_equilibrium_csv_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("equilibrium", BASELINE, "--out", a, "--grid", 201, "--svg") == 0
    assert run("equilibrium", BASELINE, "--out", b, "--grid", 201, "--svg") == 0
    for name in ("equilibrium.csv", "equilibrium.svg"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = list(csv.reader(open(a / "equilibrium.csv")))
    assert len(rows) == 202 and rows[0][1] == "Pi_1"


def test_meanfield(tmp_path):
    assert run("meanfield", BASELINE, "--out", tmp_path, "--grid", 101) == 0
    assert (tmp_path / "meanfield.csv").exists()
    assert run("meanfield", BASELINE, "--out", tmp_path, "--weights", "1.0") == 1
    assert run("meanfield", BASELINE, "--out", tmp_path, "--weights", "0.25,0.75", "--literal-n", 4) == 0


def test_residual_check(tmp_path, capsys):
    assert run("residual-check", BASELINE, "--out", tmp_path, "--size", 2, "--insurer", 2) == 0
    rows = list(csv.DictReader(open(tmp_path / "residual_check.csv")))
    assert len(rows) == 5 * 2 * 2
    assert max(float(r["residual"]) for r in rows) < 1e-6
    assert all(r["curvature_flags"] == "ok" for r in rows)


def test_simulate_seed_determinism(tmp_path):
    args = ["simulate", BASELINE, "--paths", 300, "--dt", 0.01, "--measure", "worst-case:2", "--dump-paths", 2, "--record-every", 100]
    assert cli.main(["--seed", "4", *map(str, args), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["--seed", "4", *map(str, args), "--out", str(tmp_path / "b")]) == 0
    assert cli.main(["--seed", "5", *map(str, args), "--out", str(tmp_path / "c")]) == 0
    same = [(tmp_path / d / "simulation_summary.csv").read_bytes() for d in "abc"]
    assert same[0] == same[1] != same[2]
    assert (tmp_path / "a" / "paths.csv").read_bytes() == (tmp_path / "b" / "paths.csv").read_bytes()
    summary = dict(csv.reader(open(tmp_path / "a" / "simulation_summary.csv")))
    assert {"objective_estimate", "closed_form_value", "mean_X2_T"} <= set(summary)


def test_simulate_bad_measure(tmp_path):
    assert run("simulate", BASELINE, "--paths", 10, "--dt", 0.01, "--measure", "worst-case:3", "--out", tmp_path) == 1
    assert run("simulate", BASELINE, "--paths", 10, "--dt", 0.01, "--measure", "nature", "--out", tmp_path) == 1


def test_sweep(tmp_path, capsys):
    assert run("sweep", BASELINE, "--target", "insurers[0].delta", "--values", "1,2", "--quantity", "Pi", "--grid", 51, "--out", tmp_path) == 0
    out = capsys.readouterr().out
    assert "direction: decreasing" in out
    assert (tmp_path / "sweep_Pi_insurers0_delta.csv").exists()
    assert (tmp_path / "sweep_Pi_insurers0_delta.svg").exists()
    assert run("sweep", BASELINE, "--target", "insurers[9].delta", "--values", "1,2", "--out", tmp_path) == 1
    assert run("sweep", BASELINE, "--target", "r", "--values", "a,b", "--out", tmp_path) == 1
    # a sweep value that breaks validation
    assert run("sweep", BASELINE, "--target", "zbar", "--values", "0.01", "--out", tmp_path) == 2


def test_figures(tmp_path, capsys):
    assert run("figures", BASELINE, "--out", tmp_path, "--grid", 51, "--no-svg") == 0
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert len(rows) == 18
    assert all(r["agrees"] in ("true", "") for r in rows)
    assert "MISMATCH" not in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "reinsgame", "validate", BASELINE], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "all checks pass" in proc.stdout


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for name in ("validate", "equilibrium", "meanfield", "residual-check", "simulate", "sweep", "figures"):
        assert name in out
