import math

import pytest

from harnacklab.cli import main
from harnacklab.experiments import _expand


def test_run_preset_is_deterministic(tmp_path, capsys):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--preset", "theorem2_sinV", "--out", str(out1)]) == 0
    assert main(["run", "--preset", "theorem2_sinV", "--out", str(out2)]) == 0
    a = (out1 / "theorem2_sinV.csv").read_bytes()
    assert a == (out2 / "theorem2_sinV.csv").read_bytes()
    assert a.startswith(b"t,")
    assert (out1 / "theorem2_sinV.json").exists()
    assert "PASS" in capsys.readouterr().out


def test_run_seed_changes_datum(tmp_path):
    assert main(["run", "--preset", "theorem2_sinV", "--seed", "3", "--out", str(tmp_path)]) == 0


def test_config_error_exit(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("a = 1\nV = sin\nA = 0.5\n")
    assert main(["run", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "a <= 0" in err and "certified bound" in err


@pytest.mark.parametrize(
    "argv",
    [
        ["run"],
        ["run", "--preset", "theorem2_sinV", "--config", "x.cfg"],
        ["run", "--config", "/nonexistent/file.cfg"],
        ["run", "--preset", "theorem3_interval", "--seed", "2"],
        ["run", "--preset", "theorem2_sinV", "--t-min", "-1"],
        ["frobnicate"],
        ["accept", "--only", "nonsense"],
        ["accept", "--tol", "bochner"],
    ],
)
def test_usage_errors_exit_2(argv, capsys):
    assert main(argv) == 2


def test_solver_failure_exit_3(tmp_path, capsys):
    cfg = tmp_path / "stiff.cfg"
    cfg.write_text("geometry = interval\npoints = 65\na = -1\nV = -50\nu0 = constant(value=1)\nt_end = 1\ndt = 0.1\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert "solver failure" in capsys.readouterr().err


def test_accept_identities(capsys):
    assert main(["accept", "--only", "identities"]) == 0
    out = capsys.readouterr().out
    assert "bochner" in out and "trace" in out
    assert main(["accept", "--only", "bochner", "--tol", "bochner=0"]) == 1


def test_expand_groups():
    assert _expand(["linear"]) == {"P-heat", "liyau-heat", "liyau-sharp"}
    assert _expand(["bochner", "identities"]) == {"bochner", "trace"}
    with pytest.raises(KeyError):
        _expand(["nope"])


def test_oracle_homogeneous(capsys):
    assert main(["oracle", "homogeneous", "--q0", "1", "--a", "-1", "--t", "1"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(math.exp(math.exp(-1)), rel=1e-15)


def test_oracle_gaussian(capsys):
    assert main(["oracle", "gaussian", "--p0", "1", "--a", "-1", "--t", "1"]) == 0
    lines = capsys.readouterr().out.split()
    p, q = map(float, lines[1].split(","))
    assert p == pytest.approx(0.104259966931271977, rel=1e-14)
    assert q == pytest.approx(0.332690715605376434, rel=1e-13)


def test_oracle_heat_kernel(capsys):
    assert main(["oracle", "heat-kernel", "--t", "0.5", "--points", "16"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "x0,K" and len(rows) == 17
    assert float(rows[1].split(",")[1]) == pytest.approx(0.398942282536003662, rel=1e-14)
    assert main(["oracle", "heat-kernel", "--t", "0"]) == 2


def test_oracle_reference(capsys):
    assert main(["oracle", "reference", "--preset", "theorem2_sinV", "--refine", "2"]) == 0
    rows = capsys.readouterr().out.strip().splitlines()
    assert rows[0] == "t,sup_distance"
    assert max(float(r.split(",")[1]) for r in rows[1:]) < 1e-4


def test_operators(capsys):
    assert main(["operators", "--points", "32"]) == 0
    assert "FAIL" not in capsys.readouterr().out
