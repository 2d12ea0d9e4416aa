import subprocess
import sys

from mdprsma.cli import EXIT_FAILURE, EXIT_OK, main
from mdprsma.conic import load_dump, solve

FAST = ["--set", "s=4", "--set", "s_eval=8", "--set", "trials=1", "--set", "schemes=sdma",
        "--set", "sweep_values=16", "--set", "max_outer_iters=20"]


def test_run_writes_csv_and_dat(tmp_path, capsys):
    out, dat = tmp_path / "r.csv", tmp_path / "r.dat"
    assert main(["run", *FAST, "--out", str(out), "--dat", str(dat)]) == EXIT_OK
    assert len(out.read_text().splitlines()) == 2
    assert dat.read_text().startswith("# value")
    assert "mean min rate" in capsys.readouterr().out


def test_run_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("s=4\ns_eval=8\ntrials=1\nschemes=sdma\nsweep_values=16\nmax_outer_iters=20\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r.csv")]) == EXIT_OK


def test_bad_override_exit_code(tmp_path, capsys):
    assert main(["run", "--set", "ks=3", "--out", str(tmp_path / "r.csv")]) == EXIT_FAILURE
    assert "error" in capsys.readouterr().err


def test_missing_config_exit_code(tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.cfg")]) == EXIT_FAILURE


def test_dump_problem(tmp_path):
    path = tmp_path / "p.txt"
    assert main(["dump-problem", *FAST[:4], "--scheme", "rsma-pd", "--iteration", "2", "--out", str(path)]) == EXIT_OK
    assert solve(load_dump(path)).ok


def test_module_entry_point_help():
    res = subprocess.run([sys.executable, "-m", "mdprsma", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "dump-problem" in res.stdout


def test_check_subcommand(capsys):
    assert main(["check", "--seed", "1"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert len(out) == 5 and all(line.startswith("PASS") for line in out)


def test_threads_env(monkeypatch):
    from mdprsma.harness import THREADS_ENV, default_workers
    monkeypatch.setenv(THREADS_ENV, "3")
    assert default_workers() == 3
    monkeypatch.setenv(THREADS_ENV, "lots")
    assert default_workers() == 1
