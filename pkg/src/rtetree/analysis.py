"""Error metrics, nested-grid self-convergence, and directional reconstruction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .discretization import CollocationGrid, build_time_grid, build_uniform_grid, ray_exit_distance
from .medium import MediumModel, SourceModel, attenuation_pairs, benchmark_source
from .solver import SolutionHistory, solve
from .treecode import solve_treecode

BASE_POINTS_PER_SIDE = 24


def modulus(s):
    """omega(s) = s (1 + |log s|), the error envelope of the scheme."""
    s = np.asarray(s, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(s > 0, s * (1.0 + np.abs(np.log(s))), 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ErrorReport:
    e_l2: float
    max_norm: float
    count: int
    mapping: str = "identity"

    def line(self) -> str:
        return (f"E_l2={self.e_l2!r} max_norm={self.max_norm!r} "
                f"count={self.count} mapping={self.mapping}")


def relative_l2(reference, candidate, mapping: str = "identity") -> ErrorReport:
    ref = np.asarray(reference, dtype=float).ravel()
    cand = np.asarray(candidate, dtype=float).ravel()
    if ref.shape != cand.shape:
        raise ValueError(f"length mismatch: {ref.size} vs {cand.size}")
    norm = np.linalg.norm(ref)
    if norm == 0:
        raise ValueError("reference has zero norm")
    diff = ref - cand
    return ErrorReport(float(np.linalg.norm(diff) / norm), float(np.max(np.abs(diff))),
                       int(ref.size), mapping)


# ----------------------------------------------------------------------------
# nested grids


def family_cell_size(k: int, base: int = BASE_POINTS_PER_SIDE) -> float:
    """ell = 1 / (base (2k - 1)): odd refinements keep every coarse centroid."""
    if k < 1:
        raise ValueError(f"level must be >= 1, got {k}")
    return 1.0 / (base * (2 * k - 1))


def coarse_indices(fine: CollocationGrid, coarse: CollocationGrid) -> np.ndarray:
    """Fine point index of every coarse collocation point (odd refinement only)."""
    ratio, rem = divmod(fine.m, coarse.m)
    if rem or ratio % 2 == 0:
        raise ValueError(f"grid with m = {fine.m} is not an odd refinement of m = {coarse.m}")
    i, j = coarse.ij(np.arange(coarse.M))
    half = (ratio - 1) // 2
    return fine.index(ratio * i + half, ratio * j + half)


def restrict_to_coarse(history: SolutionHistory, coarse: CollocationGrid,
                       level: int | None = None) -> np.ndarray:
    """Fine-grid values at the coarse collocation points, at the final time by default."""
    idx = coarse_indices(history.grid, coarse)
    w = history.w[-1 if level is None else level]
    return w[idx]


@dataclass
class ConvergenceResult:
    levels: list
    ell: list
    M: list
    errors: list
    slope: float
    envelope_c: float
    envelope_ok: bool
    reference_level: int
    meta: dict = field(default_factory=dict)

    def rows(self):
        return list(zip(self.levels, self.ell, self.M, self.errors))


def fitted_slope(ell, errors) -> float:
    """Least-squares slope of log(error) against log(ell)."""
    return float(np.polyfit(np.log(ell), np.log(errors), 1)[0])


def convergence_study(levels, solver: str = "treecode", n: int = 3, theta: float = 0.3,
                      medium: MediumModel | None = None, source: SourceModel | None = None,
                      horizon: float = 1.0, leaf_capacity: int = 64,
                      base: int = BASE_POINTS_PER_SIDE, log=None) -> ConvergenceResult:
    """Final-time self-convergence against the finest level, on the coarsest points.

    ``log`` is an optional callable receiving progress strings.
    """
    levels = sorted(set(int(k) for k in levels))
    if len(levels) < 3:
        raise ValueError(f"need at least 3 levels, got {levels}")
    medium = medium or MediumModel.constant(5.2, 5.0)
    source = source or benchmark_source()

    def run(k):
        grid = build_uniform_grid(family_cell_size(k, base))
        tg = build_time_grid(horizon, grid.cell_size)
        if solver == "direct":
            hist = solve(grid, tg, medium, source)
        elif solver == "treecode":
            hist = solve_treecode(grid, tg, medium, source, theta=theta, order=n,
                                  leaf_capacity=leaf_capacity)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        if log:
            log(f"level {k}: M = {grid.M}, {hist.total_time:.2f} s")
        return hist

    coarse = build_uniform_grid(family_cell_size(levels[0], base))
    ref_level = levels[-1]
    ref = restrict_to_coarse(run(ref_level), coarse)
    ells, Ms, errs = [], [], []
    for k in levels[:-1]:
        hist = run(k)
        err = relative_l2(ref, restrict_to_coarse(hist, coarse), mapping="odd-refinement").e_l2
        ells.append(hist.grid.cell_size)
        Ms.append(hist.grid.M)
        errs.append(err)
    slope = fitted_slope(ells, errs)
    # envelope anchored at the coarsest level
    c = errs[0] / modulus(ells[0])
    ok = bool(np.all(np.asarray(errs) <= c * modulus(np.asarray(ells)) * (1 + 1e-12)))
    return ConvergenceResult(levels[:-1], ells, Ms, errs, slope, float(c), ok, ref_level,
                             meta={"solver": solver, "n": n, "theta": theta})


# ----------------------------------------------------------------------------
# directional reconstruction


def angular_average_at(history: SolutionHistory, t: float, y) -> np.ndarray:
    """<u>_h(t, y): cell lookup in space, hat interpolation in time, zero for t < 0."""
    grid, tg = history.grid, history.time_grid
    cells = grid.locate(y)
    if t < 0:
        return np.zeros(len(cells))
    a = min(t / tg.step, float(tg.N))
    lo = min(int(math.floor(a)), tg.N)
    frac = a - lo
    out = history.w[lo, cells] * (1.0 - frac)
    if frac > 0:
        out = out + history.w[lo + 1, cells] * frac
    return out


def directional_solution(t: float, x, v, history: SolutionHistory, medium: MediumModel,
                         source: SourceModel, step: float | None = None) -> float:
    """Intensity u(t, x, v) as a line integral of the emission along -v.

    The emission sigma_s <u>_h + f is integrated with the composite trapezoid
    rule at spacing ``step`` (default ell / 2).
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    tau = ray_exit_distance(x, v)
    step = history.grid.cell_size / 2 if step is None else step
    if tau == 0 or t <= 0:
        return 0.0
    nseg = max(1, math.ceil(tau / step - 1e-12))
    r = np.linspace(0.0, tau, nseg + 1)
    y = x[None, :] - r[:, None] * v[None, :]
    np.clip(y, 0.0, 1.0, out=y)
    E = attenuation_pairs(np.broadcast_to(x, y.shape), y, medium)
    ss = np.asarray(medium.sigma_s(y), dtype=float)
    R = np.empty(len(r))
    for i, (ri, yi) in enumerate(zip(r, y)):
        s = t - ri
        if s < 0:
            R[i] = 0.0
            continue
        R[i] = ss[i] * angular_average_at(history, s, yi)[0] + float(source(s, yi))
    g = E * R
    return float((g.sum() - 0.5 * (g[0] + g[-1])) * (tau / nseg))
