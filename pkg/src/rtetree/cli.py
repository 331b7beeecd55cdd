"""Command-line entry point: ``rtetree {solve,exp1,exp2,validate}``."""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .config import SOLVERS, ConfigError, _floats, _ints, load_config
from .experiments import run_experiment_one, run_experiment_two, run_single
from .kernel import CellWeightTable, contraction_row_sums
from .medium import AssumptionError, validate_assumptions
from .solver import ContractionError

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--M", type=_ints, help="collocation point count(s), comma separated")
    common.add_argument("--theta", type=_floats, help="MAC parameter(s), comma separated")
    common.add_argument("--cheb-order", dest="n", type=_ints,
                        help="Chebyshev order(s), comma separated")
    common.add_argument("--leaf-cap", dest="leaf_cap", type=int, help="leaf capacity")
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker threads (default from RTETREE_THREADS)")
    common.add_argument("--deterministic", action="store_const", const=True,
                        help="ordered reductions; byte-identical output across runs")
    common.add_argument("--quiet", action="store_true")

    p = argparse.ArgumentParser(prog="rtetree", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common], help="single solve with solution dump")
    s.add_argument("--all-levels", dest="all_levels", action="store_const", const=True,
                   help="also dump every time level")
    sub.add_parser("exp1", parents=[common], help="direct vs treecode error/timing table")
    e2 = sub.add_parser("exp2", parents=[common], help="nested-grid self-convergence series")
    e2.add_argument("--levels", type=_ints, help="refinement levels k, comma separated")
    sub.add_parser("validate", parents=[common], help="check medium assumptions and contraction")
    return p


def _overrides(args) -> dict:
    keys = ["M", "theta", "n", "leaf_cap", "solver", "out", "threads", "deterministic",
            "all_levels", "levels"]
    return {k: getattr(args, k, None) for k in keys}


def cmd_validate(cfg, log) -> int:
    status = EXIT_OK
    for M in cfg.M:
        grid = cfg.grid(M)
        medium = cfg.medium(grid)
        rep = validate_assumptions(medium, grid)
        log(f"M={M}: k0={rep.k0!r} c_lower={rep.c_lower!r} c_upper={rep.c_upper!r} "
            f"{'pass' if rep.ok else 'FAIL'} ({rep.message})")
        if not rep.ok:
            status = EXIT_CONFIG
            continue
        table = CellWeightTable.build(grid)
        rows = contraction_row_sums(grid, medium, table)
        divisor = 1.0 - table.self_value / (2 * np.pi) * medium.sigma_s_at(grid)
        log(f"M={M}: max contraction row sum {float(rows.max())!r}, "
            f"min self divisor {float(divisor.min())!r}")
        if rows.max() >= 1 or divisor.min() <= 0:
            status = max(status, EXIT_NUMERICAL)
    return status


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    def log(msg):
        if not args.quiet:
            print(msg, flush=True)

    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "validate":
            return cmd_validate(cfg, log)
        if args.command == "solve":
            res = run_single(cfg)
            for name, hist in res.histories.items():
                log(f"{name}: setup {hist.setup_time:.3f}s, steps {hist.step_times.sum():.3f}s")
            if res.error is not None:
                log(res.error.line())
            for f in res.files:
                log(f"wrote {f}")
        elif args.command == "exp1":
            run_experiment_one(cfg, log=log)
        elif args.command == "exp2":
            _, slopes = run_experiment_two(cfg, log=log)
            for n, s in slopes.items():
                log(f"slope n={n}: {s!r}")
    except (ConfigError, AssumptionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractionError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MemoryError:
        print("resource exhaustion: out of memory (rows written so far were flushed)",
              file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
