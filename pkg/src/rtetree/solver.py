"""Time marching of the collocation scheme by direct O(M^2) summation.

Every source strength f_k = sigma_s * w_k + c_k reaches a target through at
most two history levels, selected by the hat function evaluated at the
retarded time. Because the grid and the time step are fixed, the weights
W * V / nu are time invariant; they are assembled once into a sparse matrix
acting on a contiguous window of past levels held in a ring buffer.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discretization import CollocationGrid, TimeGrid
from .kernel import NU1, CellWeightTable, hat
from .medium import MediumModel, SourceModel, attenuation_pairs, validate_assumptions

SNAP_TOL = 1e-9
JACOBI_TOL = 1e-12
JACOBI_MAXIT = 100


class ContractionError(ArithmeticError):
    """Same-level self coupling is not contractive; the cell size is too coarse."""


def history_depth(step: float) -> int:
    """Ring buffer depth ceil(sqrt(2)/h) + 2, including the current level."""
    return math.ceil(math.sqrt(2.0) / step) + 2


def snapped_lag_coordinate(distance, step: float) -> np.ndarray:
    """distance / h, snapped to the nearest integer when within roundoff."""
    a = np.asarray(distance, dtype=float) / step
    r = np.rint(a)
    return np.where(np.abs(a - r) <= SNAP_TOL * np.maximum(1.0, a), r, a)


def active_lags(distance: float, step: float, level: int) -> list[tuple[int, float]]:
    """History levels k <= level with nonzero hat weight V(d/h + k - level)."""
    if distance < 0 or step <= 0 or level < 0:
        raise ValueError("need distance >= 0, step > 0, level >= 0")
    a = float(snapped_lag_coordinate(distance, step))
    j = math.floor(a)
    out = []
    for lag in (j, j + 1):
        k = level - lag
        v = hat(a + k - level)
        if k >= 0 and v > 0:
            out.append((k, float(v)))
    return out


def lag_blocks(j, wlo, whi, ncols: int, depth: int, col_index, nsame: int | None = None):
    """CSR blocks from per-coupling lag arrays of shape ``(rows, K)``.

    ``col_index`` (length K) gives each coupling's source index within one
    level; ``wlo``/``whi`` are the weights at lags ``j`` and ``j + 1``.
    Returns the history block ``(rows, depth * ncols)`` and the same-level
    block ``(rows, nsame or ncols)``.
    """
    nrows = j.shape[0]
    q = np.broadcast_to(col_index, j.shape)
    cols = np.concatenate([(j - 1) * ncols + q, j * ncols + q], axis=1)
    vals = np.concatenate([wlo, whi], axis=1)
    lags = np.concatenate([j, j + 1], axis=1)
    keep = (vals != 0.0) & (lags >= 1) & (lags <= depth)
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(keep.sum(axis=1), out=indptr[1:])
    hist = sp.csr_matrix((vals[keep], cols[keep], indptr),
                         shape=(nrows, max(1, depth) * ncols))
    same = (lags == 0) & (vals != 0.0)
    r, cidx = np.nonzero(same)
    same_blk = sp.csr_matrix((vals[same], (r, q[r, cidx])), shape=(nrows, nsame or ncols))
    return hist, same_blk


class RingBuffer:
    """Last ``depth`` levels of a per-level vector, readable as one contiguous window.

    Each level is written twice, at rows ``pos`` and ``pos + depth`` with
    ``pos = -level mod depth``, so rows ``pos(l) .. pos(l) + depth - 1`` hold
    levels ``l, l - 1, ..., l - depth + 1`` in order. Unwritten levels are zero.
    """

    def __init__(self, depth: int, width: int):
        self.depth = max(1, depth)
        self.width = width
        self.data = np.zeros((2 * self.depth, width))
        self.latest = -1

    def push(self, level: int, values):
        if level != self.latest + 1:
            raise RuntimeError(f"ring buffer expected level {self.latest + 1}, got {level}")
        pos = (-level) % self.depth
        self.data[pos] = values
        self.data[pos + self.depth] = values
        self.latest = level

    def window(self, level: int) -> np.ndarray:
        """Flattened levels ``level, level-1, ..., level-depth+1`` (negative ones zero)."""
        if level > self.latest:
            raise RuntimeError(f"level {level} not yet stored (latest {self.latest})")
        if level < self.latest - self.depth + 1:
            raise RuntimeError(f"level {level} already overwritten")
        pos = (-level) % self.depth
        return self.data[pos:pos + self.depth].reshape(-1)


@dataclass
class SolutionHistory:
    """Angular-averaged solution w[l, p] and source samples c[l, p] for all levels."""

    grid: CollocationGrid
    time_grid: TimeGrid
    w: np.ndarray
    c: np.ndarray
    step_times: np.ndarray
    setup_time: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def final(self) -> np.ndarray:
        return self.w[-1]

    @property
    def total_time(self) -> float:
        return self.setup_time + float(self.step_times.sum())


def _chunks(n: int, size: int):
    return [(s, min(n, s + size)) for s in range(0, n, size)]


def _map_chunks(fn, chunks, threads: int):
    if threads <= 1:
        return [fn(*ch) for ch in chunks]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda ch: fn(*ch), chunks))


def pair_couplings(grid: CollocationGrid, medium: MediumModel, table: CellWeightTable,
                   targets: np.ndarray, sources: np.ndarray):
    """Distances and W/nu for collocation pairs (vectorized over equal-length arrays)."""
    ii, jj = grid.ij(np.arange(grid.M))
    di = ii[sources] - ii[targets]
    dj = jj[sources] - jj[targets]
    dist = grid.cell_size * np.sqrt(di * di + dj * dj)
    G = table.lookup(di, dj)
    if medium.is_constant:
        E = np.exp(-medium.sigma_t_value * dist)
    else:
        E = attenuation_pairs(grid.points[targets], grid.points[sources], medium)
    return dist, E * G / NU1


class DirectScheme:
    """All-pairs coupling operator for the marching scheme."""

    name = "direct"

    def __init__(self, grid: CollocationGrid, time_grid: TimeGrid, medium: MediumModel,
                 table: CellWeightTable | None = None, threads: int = 1, chunk: int = 256):
        self.grid = grid
        self.time_grid = time_grid
        self.medium = medium
        self.table = table or CellWeightTable.build(grid)
        M, m = grid.M, grid.m
        h = time_grid.step
        self.depth = min(history_depth(h) - 1, time_grid.N)
        ii, jj = grid.ij(np.arange(M))

        if medium.is_constant:
            # translation invariance: lag and weights depend on |di|, |dj| only
            k = np.arange(m)
            dist_tab = grid.cell_size * np.hypot(*np.meshgrid(k, k, indexing="ij"))
            a_tab = snapped_lag_coordinate(dist_tab, h)
            j_tab = np.floor(a_tab).astype(np.int64)
            frac = a_tab - j_tab
            coef = np.exp(-medium.sigma_t_value * dist_tab) * self.table.table / NU1
            lo_tab = (coef * (1.0 - frac)).ravel()
            hi_tab = (coef * frac).ravel()
            j_tab = j_tab.ravel()

        def build(lo, hi):
            rows = np.arange(lo, hi)
            if medium.is_constant:
                off = np.abs(ii[None, :] - ii[rows, None]) * m + np.abs(jj[None, :] - jj[rows, None])
                j, wlo, whi = j_tab[off], lo_tab[off], hi_tab[off]
            else:
                t = np.repeat(rows, M)
                s = np.tile(np.arange(M), hi - lo)
                dist, coef = pair_couplings(grid, medium, self.table, t, s)
                a = snapped_lag_coordinate(dist, h).reshape(hi - lo, M)
                j = np.floor(a).astype(np.int64)
                coef = coef.reshape(hi - lo, M)
                wlo, whi = coef * (1.0 - (a - j)), coef * (a - j)
            return lag_blocks(j, wlo, whi, M, self.depth, np.arange(M))

        parts = _map_chunks(build, _chunks(M, chunk), threads)
        self.hist_op = sp.vstack([p[0] for p in parts], format="csr")
        same = sp.vstack([p[1] for p in parts], format="csr")
        self.diag = same.diagonal().copy()
        self.offdiag = (same - sp.diags(self.diag)).tocsr()
        self.offdiag.eliminate_zeros()
        self.ring = RingBuffer(self.depth, M)

    @property
    def nnz(self) -> int:
        return self.hist_op.nnz + self.offdiag.nnz + self.grid.M

    def history_rhs(self, level: int) -> np.ndarray:
        if level == 0 or self.depth == 0:
            return np.zeros(self.grid.M)
        return self.hist_op @ self.ring.window(level - 1)

    def push(self, level: int, strength: np.ndarray):
        self.ring.push(level, strength)


def resolve_same_level(rhs, c, sigma_s, diag, offdiag=None, iterative=False):
    """Solve w = rhs + A0 (sigma_s w + c) where A0 = diag + offdiag.

    The diagonal is eliminated exactly; off-diagonal same-level coupling
    (only present when h > ell) is handled by Jacobi iteration.
    """
    denom = 1.0 - diag * sigma_s
    if np.any(denom <= 0):
        p = int(np.argmin(denom))
        raise ContractionError(
            f"self-coupling divisor 1 - a_pp sigma_s = {denom[p]:.3g} <= 0 at point {p}; "
            "refine the cell size")
    base = rhs + diag * c
    w = base / denom
    if offdiag is None or offdiag.nnz == 0:
        return w
    if not iterative:
        raise ValueError("time step exceeds the cell size so same-level neighbours couple; "
                         "enable iterative mode")
    for _ in range(JACOBI_MAXIT):
        w_new = (base + offdiag @ (sigma_s * w + c)) / denom
        delta = np.max(np.abs(w_new - w))
        w = w_new
        if delta <= JACOBI_TOL * max(1.0, np.max(np.abs(w))):
            break
    return w


def advance(scheme, level: int, c_level: np.ndarray, sigma_s: np.ndarray,
            iterative: bool = False) -> np.ndarray:
    """One time level: history sum, same-level resolution, then record f_l."""
    rhs = scheme.history_rhs(level)
    w = resolve_same_level(rhs, c_level, sigma_s, scheme.diag, scheme.offdiag, iterative)
    scheme.push(level, sigma_s * w + c_level)
    return w


def march(scheme, source: SourceModel, iterative: bool = False,
          setup_time: float = 0.0) -> SolutionHistory:
    grid, tg = scheme.grid, scheme.time_grid
    ss = scheme.medium.sigma_s_at(grid)
    N = tg.N
    w = np.zeros((N + 1, grid.M))
    c = np.zeros((N + 1, grid.M))
    times = np.zeros(N + 1)
    for level in range(N + 1):
        t0 = time.perf_counter()
        c[level] = source(tg.time(level), grid.points)
        w[level] = advance(scheme, level, c[level], ss, iterative)
        times[level] = time.perf_counter() - t0
    return SolutionHistory(grid=grid, time_grid=tg, w=w, c=c, step_times=times,
                           setup_time=setup_time, meta={"solver": scheme.name})


def solve(grid: CollocationGrid, time_grid: TimeGrid, medium: MediumModel,
          source: SourceModel, iterative: bool = False, threads: int = 1) -> SolutionHistory:
    """Direct-summation solve of every time level."""
    validate_assumptions(medium, grid).raise_if_failed()
    if time_grid.step > grid.cell_size * (1 + 1e-12) and not iterative:
        raise ValueError(f"time step {time_grid.step} exceeds cell size {grid.cell_size}; "
                         "enable iterative mode")
    t0 = time.perf_counter()
    scheme = DirectScheme(grid, time_grid, medium, threads=threads)
    setup = time.perf_counter() - t0
    return march(scheme, source, iterative=iterative, setup_time=setup)
