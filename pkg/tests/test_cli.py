import json
import subprocess
import sys

import pytest

from coalrate.cli import main


@pytest.fixture
def two_atoms(tmp_path):
    a, b = tmp_path / "m1.csv", tmp_path / "m2.csv"
    a.write_text("mass,weight\n1,1\n")
    b.write_text("mass,weight\n2,1\n")
    return a, b


def test_distance_prints_half(two_atoms, capsys):
    a, b = two_atoms
    assert main(["distance", "--a", str(a), "--b", str(b), "--lambda", "-1"]) == 0
    assert float(capsys.readouterr().out) == 0.5


def test_verify_kernel(capsys):
    assert main(["verify-kernel", "--name", "sum_power", "--lambda", "1"]) == 0
    assert capsys.readouterr().out.startswith("PASS")
    assert main(["verify-kernel", "--name", "min_power", "--lambda", "-1"]) == 1


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as info:
        main(["distance", "--a", "x.csv"])
    assert info.value.code == 1


def test_build_init_writes_measure(tmp_path, capsys):
    out = tmp_path / "mu.csv"
    assert main(["build-init", "--target", "gamma", "--param", "shape=3", "--n", "1000", "--lambda", "-1", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "ok" in text and "EXCEEDED" not in text
    assert out.read_text().startswith("mass,weight\n")


def test_simulate_and_reference(tmp_path, capsys):
    init = tmp_path / "d.csv"
    init.write_text("mass,weight\n1,1\n")
    traj = tmp_path / "traj.jsonl"
    assert main(["simulate", "--init", str(init), "--n", "100", "--T", "0.5", "--snapshots", "0.25,0.5", "--out", str(traj)]) == 0
    lines = traj.read_text().splitlines()
    assert len(lines) == 2 and json.loads(lines[1])["n"] == 100
    assert (tmp_path / "traj.manifest.json").exists()
    ref = tmp_path / "ref.csv"
    assert main(["reference", "--times", "0,0.5", "--out", str(ref)]) == 0
    assert ref.read_text().startswith("t,k,c_k\n0.0,1,1.0\n")


def test_numerical_failure_exits_two(tmp_path, capsys):
    init = tmp_path / "d.csv"
    init.write_text("mass,weight\n1,1\n")
    code = main(["reference", "--kind", "ode", "--init", str(init), "--times", "3", "--x-max", "20"])
    assert code == 2


def test_bad_config_exits_one(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('[experiment]\nn = [10]\nreplicates = 2\nT = 0.1\nseed = 1\nwat = 3\n[kernel]\nname = "additive"\n[initial.target]\nname = "dirac"\n')
    assert main(["convergence", "--config", str(cfg)]) == 1
    assert "experiment.wat" in capsys.readouterr().err


def test_convergence_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "additive.toml"
    cfg.write_text(
        '[experiment]\nn = [50, 100]\nreplicates = 3\nT = 0.5\nsnapshots = [0.25, 0.5]\nseed = 1\n'
        '[kernel]\nname = "additive"\n[initial.target]\nname = "dirac"\nmass = 1\n'
    )
    out = tmp_path / "out"
    assert main(["convergence", "--config", str(cfg), "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} == {"report.json", "raw.csv", "manifest.json"}
    assert "slope" in capsys.readouterr().out


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "coalrate.cli", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
