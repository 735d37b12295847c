import subprocess
import sys

import pytest

from voxinv.cli import EXIT_INVALID, EXIT_NUMERICAL, EXIT_OK, main

CFG = """
name = c
k0 = 40
box.a = 0 0 0
box.b = 0.15 0.15 0.15
grid.n = 2 2 2
truth.inclusion.a.lo = 0 0 0
truth.inclusion.a.hi = 0.075 0.075 0.075
truth.inclusion.a.k = 55+1j
source.top.face = +z
source.top.d_s = 0.003
receivers.near.plane_axis = xy
receivers.near.d_r = 0.005
noise.rel_sigma = 0.01
noise.seed = 2
regularization.svd_rel_cutoff = 1e-3
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text(CFG)
    return p


def test_verbs(cfg_file, tmp_path, capsys):
    out = tmp_path / "o"
    assert main(["forward", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    assert (out / "runs/main/u_forward.csv").is_file()
    assert main(["measure", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    assert main(["invert", "--config", str(cfg_file), "--out", str(out)]) == EXIT_OK
    assert "artifact_count" in capsys.readouterr().out
    assert main(["run", "--config", str(cfg_file), "--out", str(tmp_path / "r"), "--quiet"]) == EXIT_OK
    assert capsys.readouterr().out == ""
    assert main(["refine-loop", "--config", str(cfg_file), "--out", str(tmp_path / "l"), "--rounds", "1"]) == EXIT_OK
    assert "stopped: max-rounds" in capsys.readouterr().out


def test_seed_override(cfg_file, tmp_path):
    main(["measure", "--config", str(cfg_file), "--out", str(tmp_path / "a"), "--seed", "7", "--quiet"])
    main(["measure", "--config", str(cfg_file), "--out", str(tmp_path / "b"), "--quiet"])
    meta = (tmp_path / "a/runs/main/measurements.meta").read_text()
    assert "noise.seed = 7" in meta
    assert (tmp_path / "a/runs/main/measurements.csv").read_bytes() != (tmp_path / "b/runs/main/measurements.csv").read_bytes()


def test_bundled_name_and_list(tmp_path, capsys):
    assert main(["list"]) == EXIT_OK
    assert "sp_clean" in capsys.readouterr().out.split()
    assert main(["run", "--config", "sp_clean", "--out", str(tmp_path / "s")]) == EXIT_OK


def test_diagnose(capsys):
    assert main(["diagnose", "--n", "2", "2", "2", "--edge", "0.15", "--k0", "40"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    kv = dict(line.split(" = ") for line in lines)
    assert float(kv["bound"]) == pytest.approx(263.19, abs=5e-3)
    assert kv["satisfied"] == "false"
    assert float(kv["oracle.max_exterior_potential"]) <= 1e-4
    assert main(["diagnose", "--config", "sp_clean", "--skip-oracle"]) == EXIT_OK


def test_validation_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text(CFG + "k0 = 41\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "x")]) == EXIT_INVALID
    assert "duplicate key" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_INVALID
    assert main(["invert", "--config", str(tmp_path / "bad.cfg").replace("bad", "missing")]) == EXIT_INVALID
    assert main(["diagnose"]) == EXIT_INVALID


def test_numerical_exit_code(cfg_file, tmp_path, capsys):
    # a cutoff this close to one drops every mode but the largest, then filtering starves the solve
    p = tmp_path / "n.cfg"
    p.write_text(CFG + "filter.enabled = true\nfilter.max_rel_dev = 1e-12\n")
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "n")]) == EXIT_NUMERICAL
    assert "invert [main]" in capsys.readouterr().err


def test_module_entry_point(cfg_file, tmp_path):
    res = subprocess.run([sys.executable, "-m", "voxinv.cli", "run", "--config", str(cfg_file), "--out",
                          str(tmp_path / "m"), "--quiet"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
