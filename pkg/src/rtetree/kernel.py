"""Hat basis in time and the weakly singular cell weights of the collocation scheme."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .discretization import CollocationGrid
from .medium import MediumModel, attenuation_pairs

NU1 = 2.0 * np.pi  # circumference of the unit circle
SELF_FACTOR = 4.0 * np.log1p(np.sqrt(2.0))  # self-cell integral over ell
_TINY = 1e-300


def hat(t):
    """Piecewise-linear hat supported on (-1, 1) with V(0) = 1."""
    t = np.asarray(t, dtype=float)
    out = np.where((t >= 0) & (t <= 1), 1.0 - t, 0.0)
    out = np.where((t >= -1) & (t < 0), 1.0 + t, out)
    return out if out.ndim else float(out)


def f_aux(r, s):
    """Corner antiderivative F(r, s) of 1/|z| over the rectangle [0, r] x [0, s].

    Uses 0 log 0 = 0, which IEEE arithmetic would turn into NaN.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    ar, as_ = np.abs(r), np.abs(s)
    # log((|s| + rho) / |r|) = asinh(|s| / |r|); masked entries may overflow
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        val = ar * np.arcsinh(as_ / ar)
        val += as_ * np.arcsinh(ar / as_)
    if val.ndim == 0:
        val = np.array(0.0 if min(ar, as_) < _TINY else val)
    elif val.size and min(ar.min(), as_.min()) < _TINY:
        val[(ar < _TINY) | (as_ < _TINY)] = 0.0
    out = np.copysign(val, r * s)
    return out if out.ndim else float(out)


def geometric_cell_integral(x, y_center, ell: float):
    """Integral of 1/|x - z| over the square of side ``ell`` centred at ``y_center``.

    Broadcasts over leading dimensions of ``x`` and ``y_center``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y_center, dtype=float)
    t1 = y[..., 0] - x[..., 0]
    t2 = y[..., 1] - x[..., 1]
    return offset_cell_integral(t1, t2, ell)


def offset_cell_integral(t1, t2, ell: float):
    a = 0.5 * ell
    return (
        f_aux(t1 + a, t2 + a)
        - f_aux(t1 + a, t2 - a)
        - f_aux(t1 - a, t2 + a)
        + f_aux(t1 - a, t2 - a)
    )


@dataclass(frozen=True)
class CellWeightTable:
    """Geometric cell integrals on a uniform grid indexed by |di|, |dj|.

    The integral depends only on the offset between cells, and by the
    symmetry of the square only on the absolute index offsets.
    """

    cell_size: float
    m: int
    table: np.ndarray = field(repr=False)
    nu: float = NU1

    @classmethod
    def build(cls, grid: CollocationGrid) -> "CellWeightTable":
        k = np.arange(grid.m, dtype=float)
        di, dj = np.meshgrid(k, k, indexing="ij")
        tab = offset_cell_integral(di * grid.cell_size, dj * grid.cell_size, grid.cell_size)
        # exact value avoids the cancellation in the four corner terms
        tab[0, 0] = SELF_FACTOR * grid.cell_size
        tab.setflags(write=False)
        return cls(cell_size=grid.cell_size, m=grid.m, table=tab)

    def lookup(self, di, dj):
        return self.table[np.abs(di), np.abs(dj)]

    @property
    def self_value(self) -> float:
        return float(self.table[0, 0])


def cell_weight(x_p, x_q, ell: float, medium: MediumModel, table: CellWeightTable | None = None,
                grid: CollocationGrid | None = None):
    """W(x_p, x_q) = E(x_p, x_q) times the geometric integral over the cell at x_q.

    When a table and the grid are supplied and both points are collocation
    points, the geometric factor is read from the table.
    """
    x_p = np.atleast_2d(np.asarray(x_p, dtype=float))
    x_q = np.atleast_2d(np.asarray(x_q, dtype=float))
    x_p, x_q = np.broadcast_arrays(x_p, x_q)
    E = attenuation_pairs(x_p, x_q, medium)
    if table is not None and grid is not None:
        ip, jp = np.floor(x_p / ell).astype(int).T
        iq, jq = np.floor(x_q / ell).astype(int).T
        G = table.lookup(iq - ip, jq - jp)
    else:
        G = geometric_cell_integral(x_p, x_q, ell)
    out = E * G
    return float(out[0]) if out.size == 1 else out


def contraction_row_sums(grid: CollocationGrid, medium: MediumModel,
                         table: CellWeightTable | None = None) -> np.ndarray:
    """Row sums (1/nu) sum_q W(x_p, x_q) sigma_s(x_q) for every target p.

    The hat-in-time factor is omitted, so these bound every per-step row sum.
    """
    table = table or CellWeightTable.build(grid)
    ss = medium.sigma_s_at(grid)
    pts = grid.points
    ii, jj = grid.ij(np.arange(grid.M))
    out = np.empty(grid.M)
    for p in range(grid.M):
        G = table.lookup(ii - ii[p], jj - jj[p])
        E = attenuation_pairs(np.broadcast_to(pts[p], pts.shape), pts, medium)
        out[p] = np.dot(E * G, ss) / NU1
    return out
