"""Experiment drivers and CSV writers for the benchmark tables and convergence series."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import ErrorReport, convergence_study, relative_l2
from .config import ConfigError, RunConfig
from .medium import validate_assumptions
from .solver import SolutionHistory, solve
from .treecode import solve_treecode

EXP1_HEADER = ["M", "n", "theta", "t_dir_s", "t_tree_s", "E_l2"]
EXP2_HEADER = ["n", "level", "ell", "M", "E_l2"]
SOLUTION_HEADER = ["x", "y", "w"]


def fmt(v) -> str:
    """Round-trip float formatting (shortest repr, at most 17 significant digits)."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_solution(path, points, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SOLUTION_HEADER)
        for (x, y), val in zip(points, values):
            w.writerow([fmt(x), fmt(y), fmt(val)])


def read_solution(path):
    """Points ``(K, 2)`` and values ``(K,)`` from a solution dump."""
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, :2], data[:, 2]


def _check_assumptions(cfg: RunConfig, grid, medium):
    rep = validate_assumptions(medium, grid)
    if not rep.ok:
        raise ConfigError(f"medium rejected: {rep.message}")
    return rep


def run_solver(cfg: RunConfig, which: str, grid, tg, medium, source, theta=None, n=None):
    if which == "direct":
        return solve(grid, tg, medium, source, iterative=cfg.iterative, threads=cfg.threads)
    return solve_treecode(grid, tg, medium, source,
                          theta=cfg.theta[0] if theta is None else theta,
                          order=cfg.n[0] if n is None else n,
                          leaf_capacity=cfg.leaf_cap, iterative=cfg.iterative)


@dataclass
class SingleResult:
    histories: dict
    files: list
    error: ErrorReport | None


def run_single(cfg: RunConfig) -> SingleResult:
    """Solve once and dump the final-time solution (and optionally every level)."""
    grid = cfg.grid()
    tg = cfg.time_grid(grid)
    medium = cfg.medium(grid)
    _check_assumptions(cfg, grid, medium)
    source = cfg.source_model()
    which = ["direct", "treecode"] if cfg.solver == "both" else [cfg.solver]
    hists = {name: run_solver(cfg, name, grid, tg, medium, source) for name in which}

    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name, hist in hists.items():
        path = out / f"solution_{name}.csv"
        write_solution(path, grid.points, hist.final)
        files.append(path)
        if cfg.all_levels:
            for level in range(tg.N + 1):
                lpath = out / f"solution_{name}_l{level:04d}.csv"
                write_solution(lpath, grid.points, hist.w[level])
                files.append(lpath)
    err = None
    if len(hists) == 2:
        err = relative_l2(hists["direct"].w, hists["treecode"].w, mapping="all levels, all points")
        (out / "error.txt").write_text(err.line() + "\n")
        files.append(out / "error.txt")
    timing = {name: timing_record(cfg, h) for name, h in hists.items()}
    (out / "timing.json").write_text(json.dumps(timing, indent=2) + "\n")
    files.append(out / "timing.json")
    return SingleResult(hists, files, err)


def timing_record(cfg: RunConfig, hist: SolutionHistory) -> dict:
    return {
        "M": hist.grid.M,
        "N": hist.time_grid.N,
        "setup_s": hist.setup_time,
        "steps_s": float(hist.step_times.sum()),
        "total_s": hist.total_time,
        "step_s": [float(t) for t in hist.step_times],
        "threads": cfg.threads,
        "deterministic": cfg.deterministic,
        **{k: v for k, v in hist.meta.items() if isinstance(v, (int, float, str))},
    }


def run_experiment_one(cfg: RunConfig, out_path=None, log=None) -> list[dict]:
    """Direct vs treecode over every (M, n, theta); rows are flushed as they finish."""
    if not cfg.M:
        raise ConfigError("M list is empty")
    path = Path(out_path or Path(cfg.out) / "exp1.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXP1_HEADER)
        fh.flush()
        for M in cfg.M:
            grid = cfg.grid(M)
            tg = cfg.time_grid(grid)
            medium = cfg.medium(grid)
            _check_assumptions(cfg, grid, medium)
            source = cfg.source_model()
            direct = run_solver(cfg, "direct", grid, tg, medium, source)  # cached per M
            for n in cfg.n:
                for theta in cfg.theta:
                    tree = run_solver(cfg, "treecode", grid, tg, medium, source, theta, n)
                    err = relative_l2(direct.w, tree.w).e_l2
                    row = dict(M=M, n=n, theta=theta, t_dir_s=direct.total_time,
                               t_tree_s=tree.total_time, E_l2=err)
                    rows.append(row)
                    w.writerow([fmt(row[k]) for k in EXP1_HEADER])
                    fh.flush()
                    if log:
                        log(f"M={M} n={n} theta={theta}: t_dir={direct.total_time:.3f}s "
                            f"t_tree={tree.total_time:.3f}s E_l2={err:.3e}")
            del direct
    return rows


def run_experiment_two(cfg: RunConfig, out_path=None, log=None):
    """Self-convergence series per Chebyshev order; returns rows and per-n slopes."""
    levels = sorted(set(cfg.levels))
    if len(levels) < 3:
        raise ConfigError(f"need at least 3 levels, got {levels}")
    if cfg.medium_csv:
        raise ConfigError("experiment two needs a medium defined on every grid; "
                          "use constant sigma_t/sigma_s")
    medium = cfg.medium(None)
    source = cfg.source_model()
    path = Path(out_path or Path(cfg.out) / "exp2.csv")
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, slopes = [], {}
    solver = "direct" if cfg.solver == "direct" else "treecode"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EXP2_HEADER)
        for n in cfg.n:
            res = convergence_study(levels, solver=solver, n=n, theta=cfg.theta[0],
                                    medium=medium, source=source, horizon=cfg.T,
                                    leaf_capacity=cfg.leaf_cap, log=log)
            for k, ell, M, err in res.rows():
                row = dict(n=n, level=k, ell=ell, M=M, E_l2=err)
                rows.append(row)
                w.writerow([fmt(row[c]) for c in EXP2_HEADER])
            fh.flush()
            slopes[n] = res.slope
            if log:
                log(f"n={n}: slope {res.slope:.3f}")
    return rows, slopes
