import json
import os
import subprocess
import sys

import pytest

from nsch import cli

BASE = "n = 8\ndt = 1e-4\nt_end = 2e-4\nexperiment = merging\n"


@pytest.fixture
def config(tmp_path):
    def write(extra="", name="run.cfg"):
        path = tmp_path / name
        path.write_text(BASE + extra)
        return str(path)

    return write


def test_run_success_writes_outputs(config, tmp_path, capsys):
    assert cli.main(["run", config("out_dir = out\n")]) == 0
    assert "2 steps" in capsys.readouterr().out
    assert (tmp_path / "out" / "diagnostics.csv").exists()
    assert (tmp_path / "out" / "fields_2.vtk").exists()


def test_nonconvergence_exit_code(config, capsys):
    assert cli.main(["run", config("max_iters = 1\ntol = 1e-14\n")]) == 2
    assert "did not reach" in capsys.readouterr().err


@pytest.mark.parametrize(
    "argv",
    [
        ["run"],
        ["frobnicate", "x.cfg"],
        ["run", "/nonexistent/run.cfg"],
        ["eoc", "CFG", "--dts", "1e-6"],
        ["eoc", "CFG", "--dts", "2e-6", "1e-6", "--ref-dt", "1e-5"],
        ["sweep-eps", "CFG", "--eps", "1e-4"],
    ],
)
def test_bad_input_exit_code(config, argv):
    path = config()
    argv = [path if a == "CFG" else a for a in argv]
    assert cli.main(argv) == 1


def test_bad_config_value(config):
    assert cli.main(["run", config("scheme = nope\n")]) == 1


def test_sweep_rejects_cm(config):
    assert cli.main(["sweep-eps", config("scheme = CM\n"), "--eps", "1e-2", "1e-4"]) == 1


def test_bad_thread_count(config, monkeypatch):
    monkeypatch.setenv("NSCH_THREADS", "zero")
    assert cli.main(["run", config()]) == 1
    monkeypatch.setenv("NSCH_THREADS", "0")
    assert cli.main(["run", config()]) == 1


def test_eoc_prints_table(tmp_path, capsys):
    path = tmp_path / "eoc.cfg"
    path.write_text("n = 4\nexperiment = example1\ntol = 1e-10\nout_dir = res\n")
    assert cli.main(["eoc", str(path), "--dts", "2e-6", "1e-6", "--ref-dt", "5e-7"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("dt,e2_phi,")
    assert len(lines) == 3
    assert (tmp_path / "res" / "eoc.csv").read_text().splitlines() == lines


def test_sweep_writes_json(config, tmp_path, capsys):
    assert cli.main(["sweep-eps", config("out_dir = sw\n"), "--eps", "1e-2", "1e-4"]) == 0
    data = json.loads((tmp_path / "sw" / "sweep.json").read_text())
    assert [row["eps"] for row in data] == [1e-2, 1e-4]
    assert len(capsys.readouterr().out.splitlines()) == 2


def test_console_script_with_thread_cap(config):
    env = dict(os.environ, NSCH_THREADS="1")
    proc = subprocess.run(
        [sys.executable, "-m", "nsch.cli", "run", config()],
        capture_output=True, text=True, env=env, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert "steps" in proc.stdout
