import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import rtetree.experiments as ex

from rtetree.cli import EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, main
from rtetree.config import THREADS_ENV, ConfigError, RunConfig, load_config, parse_assignments
from rtetree.experiments import (
    EXP1_HEADER,
    EXP2_HEADER,
    read_solution,
    run_experiment_one,
    run_experiment_two,
    run_single,
    write_solution,
)


def header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


# ----------------------------------------------------------------------------
# configuration


def test_parse_assignments_and_aliases():
    vals = parse_assignments(["# comment", "M=576, 2304", "theta = 0.3,0.7", "cheb_order=6",
                              "leaf_capacity=32", "deterministic=yes", "h=none", ""])
    assert vals == {"M": (576, 2304), "theta": (0.3, 0.7), "n": (6,), "leaf_cap": 32,
                    "deterministic": True, "h": None}
    assert parse_assignments(["ell=0.02083333333333333"])["M"] == (2304,)


@pytest.mark.parametrize("line", ["M", "bogus=1", "theta=abc", "ell=0.3", "deterministic=maybe"])
def test_parse_assignments_rejects(line):
    with pytest.raises(ConfigError):
        parse_assignments([line])


def test_load_config_file_and_override_order(tmp_path, monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "3")
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("M=576\ntheta=0.5\nsolver=direct\n")
    cfg = load_config(cfg_file, {"theta": (0.4,), "out": str(tmp_path)})
    assert cfg.M == (576,) and cfg.theta == (0.4,) and cfg.solver == "direct"
    assert cfg.threads == 3
    assert load_config(cfg_file, {"threads": 1, "out": str(tmp_path)}).threads == 1


@pytest.mark.parametrize("over", [dict(theta=(1.0,)), dict(n=(1,)), dict(M=()), dict(M=(500,)),
                                  dict(solver="fmm"), dict(leaf_cap=0), dict(h=0.1, M=(576,)),
                                  dict(source="nope"), dict(medium_csv="/no/such/file")])
def test_invalid_configs(over):
    with pytest.raises(ConfigError):
        load_config(None, over)


def test_bad_thread_environment(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "many")
    with pytest.raises(ConfigError):
        load_config()


def test_config_round_trips_through_text(tmp_path):
    cfg = RunConfig(M=(576, 1024), theta=(0.3,), out=str(tmp_path)).validate()
    again = load_config(None, parse_assignments(cfg.as_lines()))
    assert again == cfg


# ----------------------------------------------------------------------------
# output formats


def test_solution_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.random((50, 2))
    vals = rng.standard_normal(50) * 10.0 ** rng.integers(-12, 5, 50)
    path = tmp_path / "s.csv"
    write_solution(path, pts, vals)
    assert header(path) == ["x", "y", "w"]
    p2, v2 = read_solution(path)
    assert np.array_equal(p2, pts) and np.array_equal(v2, vals)


def test_run_single_direct(tmp_path):
    cfg = load_config(None, dict(M=(576,), solver="direct", out=str(tmp_path / "o")))
    res = run_single(cfg)
    pts, vals = read_solution(tmp_path / "o" / "solution_direct.csv")
    assert len(vals) == 576
    assert np.array_equal(vals, res.histories["direct"].final)
    timing = json.loads((tmp_path / "o" / "timing.json").read_text())["direct"]
    assert timing["total_s"] >= timing["steps_s"] >= 0 and len(timing["step_s"]) == 25
    assert all(t >= 0 for t in timing["step_s"])
    assert res.error is None


def test_run_single_both_writes_error_line(tmp_path):
    cfg = load_config(None, dict(M=(256,), solver="both", out=str(tmp_path), all_levels=True))
    res = run_single(cfg)
    assert (tmp_path / "solution_direct.csv").exists()
    assert (tmp_path / "solution_treecode.csv").exists()
    assert (tmp_path / "solution_treecode_l0016.csv").exists()
    line = (tmp_path / "error.txt").read_text()
    assert line.startswith("E_l2=") and res.error.e_l2 < 1e-2


def test_run_single_refuses_supercritical_medium(tmp_path):
    cfg = load_config(None, dict(M=(64,), sigma_s=2.0, sigma_t=1.0, out=str(tmp_path)))
    with pytest.raises(ConfigError, match="medium rejected"):
        run_single(cfg)


def test_experiment_one_rows(tmp_path):
    cfg = load_config(None, dict(M=(256,), theta=(0.3, 0.7), n=(2, 4), out=str(tmp_path)))
    rows = run_experiment_one(cfg)
    assert header(tmp_path / "exp1.csv") == EXP1_HEADER == ["M", "n", "theta", "t_dir_s",
                                                            "t_tree_s", "E_l2"]
    assert len(rows) == 4
    # direct solve is cached per M: one timing for the whole block
    assert len({r["t_dir_s"] for r in rows}) == 1
    by = {(r["n"], r["theta"]): r["E_l2"] for r in rows}
    assert by[4, 0.3] < by[4, 0.7]


def test_experiment_one_requires_points(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment_one(RunConfig(M=(), out=str(tmp_path)))


def test_experiment_two_needs_three_levels(tmp_path):
    with pytest.raises(ConfigError):
        run_experiment_two(load_config(None, dict(levels=(1, 2), out=str(tmp_path))))


def test_experiment_two_csv(tmp_path, monkeypatch):
    # a 4-point base keeps the family tiny; the shipped default is 24
    original = ex.convergence_study
    monkeypatch.setattr(ex, "convergence_study", lambda *a, **k: original(*a, base=4, **k))
    cfg = load_config(None, dict(levels=(1, 2, 3), n=(2, 3), out=str(tmp_path)))
    rows, slopes = run_experiment_two(cfg)
    assert header(tmp_path / "exp2.csv") == EXP2_HEADER == ["n", "level", "ell", "M", "E_l2"]
    assert len(rows) == 4 and set(slopes) == {2, 3}
    assert all(s > 1 for s in slopes.values())


# ----------------------------------------------------------------------------
# command line


def test_cli_deterministic_output_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        assert main(["solve", "--M", "256", "--deterministic", "--quiet",
                     "--out", str(tmp_path / name)]) == EXIT_OK
    for f in ("solution_direct.csv", "solution_treecode.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_cli_exit_codes(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("sigma_s=2\nsigma_t=1\n")
    assert main(["solve", "--config", str(cfg), "--M", "64", "--quiet",
                 "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--M", "500", "--quiet", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["solve", "--config", str(tmp_path / "missing.cfg"), "--quiet"]) == EXIT_CONFIG
    coarse = tmp_path / "coarse.cfg"
    coarse.write_text("sigma_s=4\nsigma_t=5\n")
    assert main(["solve", "--config", str(coarse), "--M", "4", "--solver", "direct", "--quiet",
                 "--out", str(tmp_path)]) == EXIT_NUMERICAL
    assert main(["validate", "--M", "576", "--quiet"]) == EXIT_OK
    assert main(["validate", "--config", str(cfg), "--M", "64", "--quiet"]) == EXIT_CONFIG
    assert main(["exp2", "--levels", "1", "--quiet", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_cli_exp1_writes_table(tmp_path):
    assert main(["exp1", "--M", "256", "--theta", "0.5", "--cheb-order", "3", "--leaf-cap", "16",
                 "--quiet", "--out", str(tmp_path)]) == EXIT_OK
    with open(tmp_path / "exp1.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["M"] == "256" and float(rows[0]["E_l2"]) > 0


def test_console_script_module_entry(tmp_path):
    out = subprocess.run([sys.executable, "-m", "rtetree.cli", "validate", "--M", "64"],
                         capture_output=True, text=True)
    assert out.returncode == 0 and "k0=" in out.stdout
