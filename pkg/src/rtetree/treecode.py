"""Particle-cluster treecode with tensor Chebyshev interpolation and retarded-time moments.

Sources are grouped by a k-d tree. Every cluster carries moments Z[s, m] of
the strengths f_k = sigma_s * w_k + c_k, one set per retained time level,
anterpolated onto an n x n tensor grid of Chebyshev roots. A target accepts
a cluster as far field when r/R <= theta; it then evaluates the full kernel
(attenuation, cell integral and hat weight) at each interpolation node, so
the hat selects at most two history levels per node. Near leaves are summed
exactly as in the direct scheme.

Grid, tree and step size are fixed during a run, so the traversal and all
kernel values are computed once; each step reduces to sparse products over
the point and moment ring buffers plus one upward pass.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .discretization import CollocationGrid, TimeGrid
from .kernel import NU1, CellWeightTable, offset_cell_integral
from .medium import MediumModel, SourceModel, attenuation_pairs, validate_assumptions
from .solver import (
    RingBuffer,
    SolutionHistory,
    history_depth,
    march,
    pair_couplings,
    snapped_lag_coordinate,
)

DEGENERATE_WIDTH = 1e-12
DEFAULT_LEAF_CAPACITY = 64


# ----------------------------------------------------------------------------
# Chebyshev interpolation


def chebyshev_nodes(n: int) -> np.ndarray:
    """Roots of T_n, cos((2j+1) pi / 2n), in descending order."""
    if n < 1:
        raise ValueError("interpolation order must be at least 1")
    return np.cos((2 * np.arange(n) + 1) * np.pi / (2 * n))


def cheb_weights_1d(x, n: int) -> np.ndarray:
    """Matrix of 1/n + (2/n) sum_{k=1}^{n-1} T_k(x) T_k(y_j), shape ``(len(x), n)``.

    Arguments are clamped to [-1, 1], which absorbs roundoff at box faces.
    """
    x = np.clip(np.atleast_1d(np.asarray(x, dtype=float)), -1.0, 1.0)
    y = chebyshev_nodes(n)
    k = np.arange(1, n)
    Tx = np.cos(k[None, :] * np.arccos(x)[:, None])
    Ty = np.cos(k[:, None] * np.arccos(y)[None, :])
    return 1.0 / n + (2.0 / n) * (Tx @ Ty)


def tensor_nodes(n: int) -> np.ndarray:
    """The n^2 tensor nodes, index m = a * n + b for node (y_a, y_b)."""
    y = chebyshev_nodes(n)
    a, b = np.meshgrid(y, y, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


def interp_matrix(xi, n: int, degenerate=(False, False)) -> np.ndarray:
    """S_n(xi, y_m) for reference points ``xi`` (K, 2); shape ``(K, n*n)``.

    A degenerate dimension carries weight 1/n on every node, the nodes
    themselves all sitting on the box midplane.
    """
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    cols = []
    for d in range(2):
        if degenerate[d]:
            cols.append(np.full((len(xi), n), 1.0 / n))
        else:
            cols.append(cheb_weights_1d(xi[:, d], n))
    wx, wy = cols
    return (wx[:, :, None] * wy[:, None, :]).reshape(len(xi), n * n)


def interp_weight(x, y_m, n: int) -> float:
    """S_n(x, y_m) for one point ``x`` in [-1,1]^2 and one tensor node ``y_m``."""
    x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
    y_m = np.asarray(y_m, dtype=float)
    k = np.arange(1, n)
    w = 1.0
    for xi, yi in zip(x, y_m):
        w *= 1.0 / n + (2.0 / n) * np.sum(np.cos(k * np.arccos(xi)) * np.cos(k * np.arccos(yi)))
    return float(w)


# ----------------------------------------------------------------------------
# k-d tree


@dataclass
class ClusterTree:
    """Binary k-d tree with tight boxes; node 0 is the root.

    ``perm`` lists point indices so that node ``s`` owns
    ``perm[start[s]:end[s]]``. ``children[s]`` is ``(-1, -1)`` for leaves.
    """

    points: np.ndarray = field(repr=False)
    lo: np.ndarray = field(repr=False)
    hi: np.ndarray = field(repr=False)
    children: np.ndarray = field(repr=False)
    start: np.ndarray = field(repr=False)
    end: np.ndarray = field(repr=False)
    depth: np.ndarray = field(repr=False)
    perm: np.ndarray = field(repr=False)
    leaf_capacity: int = DEFAULT_LEAF_CAPACITY

    @property
    def n_nodes(self) -> int:
        return len(self.lo)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> np.ndarray:
        return 0.5 * np.hypot(*(self.hi - self.lo).T)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.children[:, 0] < 0

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.is_leaf)

    def members(self, s: int) -> np.ndarray:
        return self.perm[self.start[s]:self.end[s]]

    def degenerate(self, s: int) -> tuple[bool, bool]:
        w = self.hi[s] - self.lo[s]
        return bool(w[0] < DEGENERATE_WIDTH), bool(w[1] < DEGENERATE_WIDTH)

    def to_reference(self, s: int, x) -> np.ndarray:
        """Inverse affine map from the box of ``s`` onto [-1, 1]^2."""
        half = 0.5 * (self.hi[s] - self.lo[s])
        safe = np.where(half < 0.5 * DEGENERATE_WIDTH, 1.0, half)
        xi = (np.asarray(x, dtype=float) - self.center[s]) / safe
        return np.where(half < 0.5 * DEGENERATE_WIDTH, 0.0, xi)

    def from_reference(self, s: int, y) -> np.ndarray:
        half = 0.5 * (self.hi[s] - self.lo[s])
        half = np.where(half < 0.5 * DEGENERATE_WIDTH, 0.0, half)
        return self.center[s] + half * np.asarray(y, dtype=float)


def build_tree(points, leaf_capacity: int = DEFAULT_LEAF_CAPACITY) -> ClusterTree:
    """Median split on the widest box dimension; ties broken by point index."""
    points = np.asarray(points, dtype=float)
    if len(points) == 0:
        raise ValueError("cannot build a tree over an empty point set")
    if leaf_capacity < 1:
        raise ValueError("leaf capacity must be at least 1")
    lo, hi, children, start, end, depth = [], [], [], [], [], []
    perm = []

    def new_node(idx, d):
        s = len(lo)
        pts = points[idx]
        lo.append(pts.min(axis=0))
        hi.append(pts.max(axis=0))
        children.append([-1, -1])
        start.append(0)
        end.append(0)
        depth.append(d)
        return s

    # explicit DFS so leaves come out left to right in perm
    root = new_node(np.arange(len(points)), 0)
    todo = [(root, np.arange(len(points)))]
    while todo:
        s, idx = todo.pop()
        if len(idx) <= leaf_capacity:
            start[s] = len(perm)
            perm.extend(idx.tolist())
            end[s] = len(perm)
            continue
        width = hi[s] - lo[s]
        dim = int(np.argmax(width))
        order = np.lexsort((idx, points[idx, dim]))
        half = len(idx) // 2
        left, right = idx[order[:half]], idx[order[half:]]
        cl = new_node(left, depth[s] + 1)
        cr = new_node(right, depth[s] + 1)
        children[s] = [cl, cr]
        todo.append((cr, right))
        todo.append((cl, left))
    tree = ClusterTree(
        points=points,
        lo=np.array(lo), hi=np.array(hi),
        children=np.array(children, dtype=np.int64),
        start=np.array(start, dtype=np.int64), end=np.array(end, dtype=np.int64),
        depth=np.array(depth, dtype=np.int64),
        perm=np.array(perm, dtype=np.int64),
        leaf_capacity=leaf_capacity,
    )
    # internal nodes span their children's contiguous ranges
    for s in np.argsort(-tree.depth, kind="stable"):
        c = tree.children[s]
        if c[0] >= 0:
            tree.start[s] = tree.start[c[0]]
            tree.end[s] = tree.end[c[1]]
    return tree


# ----------------------------------------------------------------------------
# moments


class UpwardPass:
    """Leaf anterpolation plus child-to-parent transfers, as sparse operators."""

    def __init__(self, tree: ClusterTree, n: int):
        self.tree = tree
        self.n = n
        nn = n * n
        S = tree.n_nodes
        self.nodes = np.empty((S, nn, 2))
        ref = tensor_nodes(n)
        for s in range(S):
            self.nodes[s] = self.tree.from_reference(s, ref)

        rows, cols, vals = [], [], []
        for s in tree.leaves:
            q = tree.members(s)
            Wt = interp_matrix(tree.to_reference(s, tree.points[q]), n, tree.degenerate(s))
            rows.append(s * nn + np.repeat(np.arange(nn)[None, :], len(q), 0).ravel())
            cols.append(np.repeat(q, nn))
            vals.append(Wt.ravel())
        self.leaf_op = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(S * nn, len(tree.points)))

        self.transfers = []
        maxd = int(tree.depth.max())
        for d in range(maxd - 1, -1, -1):
            rows, cols, vals = [], [], []
            for s in np.flatnonzero((tree.depth == d) & ~tree.is_leaf):
                for t in tree.children[s]:
                    # T[m, r] = S_n(L_s^{-1} L_t y_r, y_m)
                    Tm = interp_matrix(tree.to_reference(s, self.nodes[t]), n, tree.degenerate(s))
                    r_idx, m_idx = np.meshgrid(np.arange(nn), np.arange(nn), indexing="ij")
                    rows.append((s * nn + m_idx).ravel())
                    cols.append((t * nn + r_idx).ravel())
                    vals.append(Tm.ravel())
            if rows:
                self.transfers.append(sp.csr_matrix(
                    (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                    shape=(S * nn, S * nn)))

    @property
    def width(self) -> int:
        return self.tree.n_nodes * self.n * self.n

    def __call__(self, strengths) -> np.ndarray:
        Z = self.leaf_op @ np.asarray(strengths, dtype=float)
        for T in self.transfers:
            Z += T @ Z
        return Z


def upward_pass(tree: ClusterTree, strengths, n: int) -> np.ndarray:
    """Moments Z[s, m] of ``strengths`` for every cluster, shape ``(S, n*n)``."""
    return UpwardPass(tree, n)(strengths).reshape(tree.n_nodes, n * n)


def flat_anterpolation(tree: ClusterTree, s: int, strengths, n: int) -> np.ndarray:
    """Moments of cluster ``s`` from its points directly, skipping the hierarchy."""
    q = tree.members(s)
    Wt = interp_matrix(tree.to_reference(s, tree.points[q]), n, tree.degenerate(s))
    return Wt.T @ np.asarray(strengths, dtype=float)[q]


# ----------------------------------------------------------------------------
# interaction lists


@dataclass
class InteractionLists:
    """Far (target, cluster) and near (target, leaf) pairs, sorted by target."""

    far_target: np.ndarray
    far_cluster: np.ndarray
    near_target: np.ndarray
    near_leaf: np.ndarray


def mac_accepts(r, R, theta: float, min_gap: float = 0.0):
    """Far-field test r/R <= theta, never true for theta = 0.

    ``min_gap`` additionally requires R - r >= min_gap so that no
    interpolation node lies within one time step of the target.
    """
    r = np.asarray(r)
    R = np.asarray(R)
    if theta <= 0:
        return np.zeros(np.broadcast(r, R).shape, dtype=bool)
    return (r <= theta * R) & (R - r >= min_gap)


def interaction_lists(tree: ClusterTree, targets, theta: float,
                      min_gap: float = 0.0) -> InteractionLists:
    """Target-by-target descent from the root, vectorized across targets."""
    targets = np.asarray(targets, dtype=float)
    center, radius, leaf = tree.center, tree.radius, tree.is_leaf
    tgt = np.arange(len(targets))
    node = np.zeros(len(targets), dtype=np.int64)
    far_t, far_s, near_t, near_s = [], [], [], []
    while tgt.size:
        R = np.hypot(*(targets[tgt] - center[node]).T)
        acc = mac_accepts(radius[node], R, theta, min_gap)
        far_t.append(tgt[acc])
        far_s.append(node[acc])
        rest = ~acc
        at_leaf = rest & leaf[node]
        near_t.append(tgt[at_leaf])
        near_s.append(node[at_leaf])
        go = rest & ~leaf[node]
        kids = tree.children[node[go]]
        tgt = np.repeat(tgt[go], 2)
        node = kids.ravel()

    def sort(t, s):
        t, s = np.concatenate(t), np.concatenate(s)
        order = np.argsort(t, kind="stable")
        return t[order], s[order]

    ft, fs = sort(far_t, far_s)
    nt, ns = sort(near_t, near_s)
    return InteractionLists(ft, fs, nt, ns)


# ----------------------------------------------------------------------------
# scheme


def _merge_rows(entry_target, indptr_entries, nrows):
    """Collapse per-entry CSR rows (sorted by target) into per-target rows."""
    counts = np.diff(indptr_entries)
    per_target = np.bincount(entry_target, weights=counts, minlength=nrows).astype(np.int64)
    indptr = np.zeros(nrows + 1, dtype=np.int64)
    np.cumsum(per_target, out=indptr[1:])
    return indptr


def _lag_csr(target, colidx, a, coef, ncols: int, depth: int, nrows: int):
    """History and same-level CSR blocks for couplings given per entry row.

    All inputs have shape ``(E, k)``; ``target`` is sorted along axis 0.
    """
    E, k = a.shape
    itype = np.int32 if (depth + 1) * ncols < 2**31 else np.int64
    j = np.floor(a).astype(itype)
    frac = a - j
    vals = np.empty((E, 2 * k))
    np.multiply(coef, 1.0 - frac, out=vals[:, :k])
    np.multiply(coef, frac, out=vals[:, k:])
    lags = np.empty((E, 2 * k), dtype=itype)
    lags[:, :k] = j
    np.add(j, 1, out=lags[:, k:])
    nz = vals != 0.0
    keep = nz & (lags >= 1) & (lags <= depth)
    ci = np.asarray(colidx, dtype=itype)
    cols = (lags - 1) * itype(ncols)
    cols[:, :k] += ci
    cols[:, k:] += ci
    row_entries = np.zeros(E + 1, dtype=np.int64)
    np.cumsum(np.count_nonzero(keep, axis=1), out=row_entries[1:])
    indptr = _merge_rows(target[:, 0], row_entries, nrows)
    hist = sp.csr_matrix((vals[keep], cols[keep], indptr), shape=(nrows, max(1, depth) * ncols))
    same = nz & (lags == 0)
    if not same.any():
        return hist, sp.csr_matrix((nrows, ncols))
    e, c = np.nonzero(same)
    rows = np.broadcast_to(target, j.shape)[e, c % k]
    cidx = np.broadcast_to(colidx, j.shape)[e, c % k]
    return hist, sp.csr_matrix((vals[same], (rows, cidx)), shape=(nrows, ncols))


class TreecodeScheme:
    """Treecode coupling operator for the marching scheme."""

    name = "treecode"

    def __init__(self, grid: CollocationGrid, time_grid: TimeGrid, medium: MediumModel,
                 theta: float = 0.3, order: int = 6, leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
                 table: CellWeightTable | None = None, chunk: int = 128,
                 lag_mode: str = "node"):
        if lag_mode not in ("node", "center"):
            raise ValueError(f"unknown lag mode {lag_mode!r}")
        if not 0 <= theta < 1:
            raise ValueError(f"theta must lie in [0, 1), got {theta}")
        if order < 2:
            raise ValueError(f"interpolation order must be at least 2, got {order}")
        self.grid = grid
        self.time_grid = time_grid
        self.medium = medium
        self.theta = theta
        self.order = order
        self.table = table or CellWeightTable.build(grid)
        M = grid.M
        h = time_grid.step
        self.depth = min(history_depth(h) - 1, time_grid.N)

        self.tree = build_tree(grid.points, leaf_capacity)
        self.lists = interaction_lists(self.tree, grid.points, theta, min_gap=h)
        self.upward = UpwardPass(self.tree, order)
        nn = order * order
        K = self.upward.width

        # near field: every point of every near leaf, exactly as the direct sum
        L = self.lists
        sizes = self.tree.end[L.near_leaf] - self.tree.start[L.near_leaf]
        nt = np.repeat(L.near_target, sizes)
        offs = np.arange(sizes.sum()) - np.repeat(np.cumsum(sizes) - sizes, sizes)
        nq = self.tree.perm[np.repeat(self.tree.start[L.near_leaf], sizes) + offs]
        dist, coef = pair_couplings(grid, medium, self.table, nt, nq)
        a = snapped_lag_coordinate(dist, h)
        near_hist, near_same = _lag_csr(nt[:, None], nq[:, None], a[:, None], coef[:, None],
                                        M, self.depth, M)
        self.near_op = near_hist
        self.diag = near_same.diagonal().copy()
        self.offdiag = (near_same - sp.diags(self.diag)).tocsr()
        self.offdiag.eliminate_zeros()

        # far field: kernel at every interpolation node of every accepted cluster
        blocks = []
        nodes = self.upward.nodes
        ft, fs = L.far_target, L.far_cluster
        for lo in range(0, M, chunk):
            sel = slice(*np.searchsorted(ft, [lo, lo + chunk]))
            t, s = ft[sel], fs[sel]
            X = grid.points[t][:, None, :]
            Y = nodes[s]
            coef, dist = self._far_kernel(X, Y)
            if lag_mode == "node":
                a = snapped_lag_coordinate(dist, h)
            else:
                dc = np.hypot(*(self.tree.center[s] - grid.points[t]).T)
                a = np.broadcast_to(snapped_lag_coordinate(dc, h)[:, None], coef.shape)
            cols = s[:, None] * nn + np.arange(nn)[None, :]
            tt = np.broadcast_to((t - lo)[:, None], cols.shape)
            hist, same = _lag_csr(tt, cols, a, coef, K, self.depth, min(M, lo + chunk) - lo)
            if same.nnz:
                raise RuntimeError("far-field node within one time step of its target")
            blocks.append(hist)
        self.far_op = sp.vstack(blocks, format="csr")
        self.points_ring = RingBuffer(self.depth, M)
        self.moment_ring = RingBuffer(self.depth, K) if self.far_op.nnz else None

    def _far_kernel(self, X, Y):
        """W/nu and distance, using a virtual cell centred at each node."""
        X, Y = np.broadcast_arrays(X, Y)
        t1 = Y[..., 0] - X[..., 0]
        t2 = Y[..., 1] - X[..., 1]
        dist = np.hypot(t1, t2)
        if self.medium.is_constant:
            E = np.exp(-self.medium.sigma_t_value * dist)
        else:
            E = attenuation_pairs(X.reshape(-1, 2), Y.reshape(-1, 2), self.medium).reshape(dist.shape)
        G = offset_cell_integral(t1, t2, self.grid.cell_size)
        G *= E
        G /= NU1
        return G, dist

    @property
    def nnz(self) -> int:
        return self.near_op.nnz + self.far_op.nnz + self.offdiag.nnz + self.grid.M

    def history_rhs(self, level: int) -> np.ndarray:
        if level == 0:
            return np.zeros(self.grid.M)
        rhs = self.near_op @ self.points_ring.window(level - 1)
        if self.moment_ring is not None:
            rhs += self.far_op @ self.moment_ring.window(level - 1)
        return rhs

    def evaluate_rhs(self, level: int, p: int) -> float:
        """History part of the right-hand side at one target."""
        if level == 0:
            return 0.0
        val = self.near_op[p] @ self.points_ring.window(level - 1)
        if self.moment_ring is not None:
            val = val + self.far_op[p] @ self.moment_ring.window(level - 1)
        return float(np.asarray(val).ravel()[0])

    def push(self, level: int, strength: np.ndarray):
        self.points_ring.push(level, strength)
        if self.moment_ring is not None:
            self.moment_ring.push(level, self.upward(strength))


def solve_treecode(grid: CollocationGrid, time_grid: TimeGrid, medium: MediumModel,
                   source: SourceModel, theta: float = 0.3, order: int = 6,
                   leaf_capacity: int = DEFAULT_LEAF_CAPACITY,
                   iterative: bool = False, lag_mode: str = "node") -> SolutionHistory:
    validate_assumptions(medium, grid).raise_if_failed()
    if time_grid.step > grid.cell_size * (1 + 1e-12) and not iterative:
        raise ValueError(f"time step {time_grid.step} exceeds cell size {grid.cell_size}; "
                         "enable iterative mode")
    t0 = time.perf_counter()
    scheme = TreecodeScheme(grid, time_grid, medium, theta, order, leaf_capacity,
                             lag_mode=lag_mode)
    setup = time.perf_counter() - t0
    hist = march(scheme, source, iterative=iterative, setup_time=setup)
    hist.meta.update(theta=theta, order=order, leaf_capacity=leaf_capacity)
    return hist
