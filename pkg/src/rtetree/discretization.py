"""Spatial collocation grid, time grid, and ray geometry on the unit square."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INTERIOR = 0
BOUNDARY_CLIPPED = 1


@dataclass(frozen=True)
class CollocationGrid:
    """Uniform partition of [0, 1]^2 into square cells with centroid collocation.

    Points are ordered row-major with the x index fastest: ``p = j * m + i``.
    """

    cell_size: float
    m: int
    points: np.ndarray = field(repr=False)
    # every cell of the square is interior; the clipped kind exists for
    # general convex domains, which are not built here
    cell_kind: np.ndarray = field(repr=False)

    @property
    def M(self) -> int:
        return self.m * self.m

    @property
    def cell_area(self) -> float:
        return self.cell_size**2

    def index(self, i, j):
        return np.asarray(j) * self.m + np.asarray(i)

    def ij(self, p):
        p = np.asarray(p)
        return p % self.m, p // self.m

    def locate(self, x) -> np.ndarray:
        """Index of the cell containing each point (closed on the far faces)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ij = np.floor(x / self.cell_size).astype(np.int64)
        np.clip(ij, 0, self.m - 1, out=ij)
        return ij[:, 1] * self.m + ij[:, 0]


def build_uniform_grid(cell_size: float) -> CollocationGrid:
    if not np.isfinite(cell_size) or cell_size <= 0:
        raise ValueError(f"cell size must be positive, got {cell_size}")
    if cell_size > 0.5:
        raise ValueError(f"cell size must be at most 1/2, got {cell_size}")
    inv = 1.0 / cell_size
    m = int(round(inv))
    if abs(inv - m) > 1e-9:
        raise ValueError(
            f"1/cell_size = {inv:.12g} is not an integer; nearest valid cell size is 1/{m}"
        )
    ell = 1.0 / m
    i, j = np.meshgrid(np.arange(m), np.arange(m), indexing="xy")
    pts = np.column_stack([(i.ravel() + 0.5) * ell, (j.ravel() + 0.5) * ell])
    pts.setflags(write=False)
    kind = np.full(m * m, INTERIOR, dtype=np.int8)
    kind.setflags(write=False)
    return CollocationGrid(cell_size=ell, m=m, points=pts, cell_kind=kind)


def grid_from_points(npoints: int) -> CollocationGrid:
    """Grid with ``npoints`` collocation points (must be a perfect square)."""
    m = int(round(np.sqrt(npoints)))
    if m * m != npoints:
        raise ValueError(f"M = {npoints} is not a perfect square")
    return build_uniform_grid(1.0 / m)


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    step: float
    N: int

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.step

    def time(self, level: int) -> float:
        return level * self.step


def build_time_grid(horizon: float, step: float) -> TimeGrid:
    if horizon <= 0 or step <= 0:
        raise ValueError("horizon and step must be positive")
    ratio = horizon / step
    N = int(round(ratio))
    if N < 1 or abs(ratio - N) > 1e-9 * max(1.0, ratio):
        raise ValueError(f"horizon/step = {ratio:.12g} is not an integer")
    return TimeGrid(horizon=float(horizon), step=float(step), N=N)


def ray_exit_distance(x, v) -> float:
    """Distance from ``x`` to the boundary of [0,1]^2 travelling along ``-v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if abs(np.hypot(*v) - 1.0) > 1e-12:
        raise ValueError("direction must be a unit vector")
    if np.any(x < 0.0) or np.any(x > 1.0):
        raise ValueError(f"point {x} lies outside the unit square")
    tau = np.inf
    with np.errstate(over="ignore"):  # tiny |v_i| just means that face is never hit
        for xi, vi in zip(x, v):
            if vi > 0.0:
                tau = min(tau, xi / vi)
            elif vi < 0.0:
                tau = min(tau, (1.0 - xi) / -vi)
    return float(min(tau, np.sqrt(2.0)))


def chord_length(x, v) -> float:
    return ray_exit_distance(x, v) + ray_exit_distance(x, -np.asarray(v, dtype=float))
