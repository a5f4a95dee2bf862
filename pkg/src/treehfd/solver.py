"""Per-tree least-squares estimation of the tree Hoeffding decomposition.

For one tree, every component ``mu^(J)`` is piecewise constant on the
Cartesian grid over ``J``. The empirical loss is a sum of squares:

* one fit term per data point, ``(T(x_i) - sum_J mu^(J)(x_i^(J)))^2 / n``;
* one orthogonality term per ``(J, j in J, cell A of the grid over J\\j)``,
  ``[ p(A)^(-1/2) sum_k' beta_k' p(A_k' & A) ]^2``.

Stacking the cell coefficients into ``beta`` turns it into
``||Z - C beta||^2``; identical fit rows are merged with weight
``sqrt(count / n)`` so the squared norm equals the loss exactly.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .decomposition import Decomposition, TreeTable
from .model import Ensemble, Tree
from .partition import INF, axis_partitions, collect_subsets, grid_shape, locate_rows, prune_tree

FIT, ORTH = 0, 1


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (relative residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SolveParams:
    d_I: int = 2
    d_T: float = INF
    d_V: float = INF
    cg_tolerance: float = 1e-10
    max_iterations: int | None = None  # default: 10 x column count
    ridge: float = 1e-10
    dense_max_columns: int = 512
    method: str = "auto"  # "auto", "dense" or "cg"

    def __post_init__(self):
        if self.d_I < 1:
            raise ValueError("d_I must be >= 1")
        if self.d_T < 0 or self.d_V < 1:
            raise ValueError("need d_T >= 0 and d_V >= 1")
        if self.cg_tolerance <= 0 or self.ridge <= 0:
            raise ValueError("tolerances must be > 0")
        if self.method not in ("auto", "dense", "cg"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class SubsetBlock:
    """Column block of one subset ``J``: its nonempty cells and frequencies."""

    J: tuple
    shape: tuple
    cells: np.ndarray  # flat (row-major) indices of nonempty cells
    freq: np.ndarray   # empirical frequency of each nonempty cell
    offset: int        # first column of the block


@dataclass
class ConstraintSystem:
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    targets: np.ndarray
    row_kind: np.ndarray
    columns: list        # (J, flat cell) per column; column 0 is ((), 0)
    blocks: dict         # J -> SubsetBlock, for nonempty J
    n: int = 0
    fit_weights: np.ndarray = field(default=None)

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    @property
    def n_rows(self) -> int:
        return len(self.targets)

    def matrix(self) -> sp.csr_matrix:
        return sp.csr_matrix((self.vals, (self.rows, self.cols)),
                             shape=(self.n_rows, self.n_columns))

    def dense(self) -> np.ndarray:
        return self.matrix().toarray()


def build_system(sig: np.ndarray, freq: np.ndarray, target: np.ndarray,
                 subsets, axes, dims, n: int = 0) -> ConstraintSystem:
    """Assemble the stacked loss from distinct cell signatures.

    ``sig`` holds one row per distinct signature with the interval index on
    each variable of ``axes`` (grid sizes ``dims``), ``freq`` its (empirical
    or exact) probability and ``target`` the tree value there.
    """
    sig = np.asarray(sig, dtype=np.int64).reshape(len(freq), len(axes))
    freq = np.asarray(freq, dtype=float)
    target = np.asarray(target, dtype=float)
    pos = {v: i for i, v in enumerate(axes)}
    m = len(freq)

    columns: list = [((), 0)]
    blocks: dict = {}
    fit_cols = [np.zeros(m, dtype=np.int64)]
    for J in subsets:
        if not J:
            continue
        idx = [pos[j] for j in J]
        shape = tuple(dims[i] for i in idx)
        flat = np.ravel_multi_index(sig[:, idx].T, shape)
        cells, inv = np.unique(flat, return_inverse=True)
        pk = np.bincount(inv, weights=freq, minlength=len(cells))
        blocks[J] = SubsetBlock(J, shape, cells, pk, len(columns))
        fit_cols.append(len(columns) + inv)
        columns.extend((J, int(c)) for c in cells)

    w = np.sqrt(freq)
    n_terms = len(fit_cols)
    rows = [np.tile(np.arange(m), n_terms)]
    cols = [np.concatenate(fit_cols)]
    vals = [np.tile(w, n_terms)]
    targets = [w * target]
    kinds = [np.full(m, FIT, dtype=np.int8)]

    next_row = m
    for J, blk in blocks.items():
        multi = np.unravel_index(blk.cells, blk.shape)
        for jpos in range(len(J)):
            keep = [a for a in range(len(J)) if a != jpos]
            if keep:
                kflat = np.ravel_multi_index(tuple(multi[a] for a in keep),
                                             tuple(blk.shape[a] for a in keep))
            else:
                kflat = np.zeros(len(blk.cells), dtype=np.int64)
            kcells, kinv = np.unique(kflat, return_inverse=True)
            pK = np.bincount(kinv, weights=blk.freq, minlength=len(kcells))
            rows.append(next_row + kinv)
            cols.append(blk.offset + np.arange(len(blk.cells)))
            vals.append(blk.freq / np.sqrt(pK[kinv]))
            targets.append(np.zeros(len(kcells)))
            kinds.append(np.full(len(kcells), ORTH, dtype=np.int8))
            next_row += len(kcells)

    return ConstraintSystem(
        rows=np.concatenate(rows), cols=np.concatenate(cols), vals=np.concatenate(vals),
        targets=np.concatenate(targets), row_kind=np.concatenate(kinds),
        columns=columns, blocks=blocks, n=n, fit_weights=w,
    )


def assemble(tree: Tree, data: np.ndarray, subsets, grids) -> ConstraintSystem:
    """Constraint system of the empirical loss of ``tree`` over ``data``."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if n == 0:
        raise ValueError("empty data")
    axes = sorted({j for J in subsets for j in J})
    dims = grid_shape(grids, axes)
    sig = locate_rows(grids, data, axes)
    leaf = tree.apply(data)
    # the leaf joins the key so rows stay exact when subsets do not cover
    # every split variable (d_V truncation)
    keys, inv, counts = np.unique(np.column_stack([sig, leaf]), axis=0,
                                  return_inverse=True, return_counts=True)
    inv = inv.ravel()
    target = np.empty(len(keys))
    target[inv] = tree.predict(data)
    return build_system(keys[:, :-1], counts / n, target, subsets, axes, dims, n)


def _ridge(A: sp.csr_matrix, ridge: float) -> float:
    colnorm2 = np.asarray(A.multiply(A).sum(axis=0)).ravel()
    return ridge * float(colnorm2.mean())


REFINE_STEPS = 2


def _solve_dense(A: sp.csr_matrix, z: np.ndarray, lam: float) -> np.ndarray:
    k = A.shape[1]
    C = A.toarray()
    Q, R = scipy.linalg.qr(np.vstack([C, math.sqrt(lam) * np.eye(k)]), mode="economic")
    Qc = Q[: C.shape[0]]  # the ridge block of the right-hand side is always zero
    beta = scipy.linalg.solve_triangular(R, Qc.T @ z)
    # iterated ridge: each pass shrinks the ridge bias by lam / (sigma^2 + lam)
    # and the iterates stay in range(C^T), so they approach the minimal-norm solution
    for _ in range(REFINE_STEPS):
        beta = beta + scipy.linalg.solve_triangular(R, Qc.T @ (z - C @ beta))
    return beta


def _solve_cg(A: sp.csr_matrix, z: np.ndarray, lam: float, tol: float, maxit: int) -> np.ndarray:
    # CG on (A^T A + lam I) beta = A^T z in CGLS form. No preconditioner:
    # iterates must stay in range(A^T) so rank-deficient systems converge
    # to the minimal-norm solution, like the dense path.
    At = A.T.tocsr()
    b = At @ z
    bnorm = np.linalg.norm(b)
    x = np.zeros(A.shape[1])
    if bnorm == 0.0:
        return x
    res = z.copy()           # z - A x
    r = b.copy()             # A^T res - lam x
    p = r.copy()
    rr = r @ r
    rel = 1.0
    for _ in range(maxit):
        q = A @ p
        alpha = rr / (q @ q + lam * (p @ p))
        x += alpha * p
        res -= alpha * q
        r = At @ res - lam * x
        rr_new = r @ r
        rel = math.sqrt(rr_new) / bnorm
        if rel <= tol:
            return x
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise SolverError("conjugate gradient did not converge", rel)


def solve(sys: ConstraintSystem, params: SolveParams = SolveParams()) -> np.ndarray:
    """Minimize ``||Z - C beta||^2 + ridge * ||beta||^2``.

    The ridge is ``params.ridge`` times the mean squared column norm. The
    dense path adds ``REFINE_STEPS`` rounds of iterated ridge, which removes
    most of the ridge bias and moves toward the minimal-norm least-squares
    solution.
    """
    A = sys.matrix()
    lam = _ridge(A, params.ridge)
    method = params.method
    if method == "auto":
        method = "dense" if sys.n_columns <= params.dense_max_columns else "cg"
    if method == "dense":
        return _solve_dense(A, sys.targets, lam)
    maxit = params.max_iterations or 10 * sys.n_columns
    return _solve_cg(A, sys.targets, lam, params.cg_tolerance, maxit)


def fill_empty_cells(values: np.ndarray, counts: np.ndarray) -> np.ndarray:
    """Give every empty cell the value of its most populated neighbour.

    Neighbours differ by one interval along one axis. Ties go to the lower
    axis, then the lower interval index. Cells with no nonempty neighbour
    are filled in later passes from cells filled in earlier ones.
    """
    values = np.array(values, dtype=float)
    counts = np.asarray(counts, dtype=float)
    assigned = counts > 0
    if not assigned.any():
        raise ValueError("grid has no nonempty cell")
    score = np.where(assigned, counts, 0.0)
    while not assigned.all():
        cand_score, cand_val = [], []
        for axis in range(values.ndim):
            for step in (-1, 1):  # lower interval index first
                s = np.full(values.shape, -1.0)
                v = np.zeros(values.shape)
                src = [slice(None)] * values.ndim
                dst = [slice(None)] * values.ndim
                if step == -1:
                    src[axis], dst[axis] = slice(0, -1), slice(1, None)
                else:
                    src[axis], dst[axis] = slice(1, None), slice(0, -1)
                src, dst = tuple(src), tuple(dst)
                s[dst] = np.where(assigned[src], score[src], -1.0)
                v[dst] = values[src]
                cand_score.append(s)
                cand_val.append(v)
        cand_score = np.stack(cand_score)
        best = np.argmax(cand_score, axis=0)  # first max = lowest axis / index
        best_score = np.take_along_axis(cand_score, best[None], 0)[0]
        new = ~assigned & (best_score >= 0)
        if not new.any():
            raise ValueError("grid is not connected")
        values[new] = np.take_along_axis(np.stack(cand_val), best[None], 0)[0][new]
        assigned = assigned | new
    return values


@dataclass
class TreeComponents:
    tree_index: int
    constant: float
    tables: dict          # J -> TreeTable (empty cells filled)
    counts: dict          # J -> per-cell sample counts over the full grid
    fit_residual: float   # sqrt of the fit part of the loss at the solution
    orth_residual: float  # sqrt of the orthogonality part
    n_columns: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.constant)
        for tab in self.tables.values():
            out += tab.evaluate(X)
        return out


def components_from_solution(sys: ConstraintSystem, beta: np.ndarray, grids,
                             tree_index: int = 0) -> TreeComponents:
    tables, counts = {}, {}
    for J, blk in sys.blocks.items():
        full = np.zeros(int(np.prod(blk.shape)))
        cnt = np.zeros_like(full)
        full[blk.cells] = beta[blk.offset: blk.offset + len(blk.cells)]
        cnt[blk.cells] = blk.freq * max(sys.n, 1)
        full = fill_empty_cells(full.reshape(blk.shape), cnt.reshape(blk.shape))
        cuts = tuple(grids[j] for j in J)
        tables[J] = TreeTable(J, cuts, full)
        counts[J] = cnt.reshape(blk.shape)
    res = sys.targets - sys.matrix() @ beta
    fit = sys.row_kind == FIT
    return TreeComponents(
        tree_index=tree_index, constant=float(beta[0]), tables=tables, counts=counts,
        fit_residual=float(np.linalg.norm(res[fit])),
        orth_residual=float(np.linalg.norm(res[~fit])),
        n_columns=sys.n_columns,
    )


def fit_tree_hfd(tree: Tree, data, params: SolveParams = SolveParams(),
                 tree_index: int = 0) -> TreeComponents:
    """Decompose a single tree: prune, grid, enumerate subsets, solve, fill."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] == 0:
        raise ValueError("empty data")
    if math.isfinite(params.d_T):
        tree = prune_tree(tree, params.d_T, data)
    grids = axis_partitions(tree)
    subsets = collect_subsets(tree, params.d_I, params.d_V)
    sys = assemble(tree, data, subsets, grids)
    beta = solve(sys, params)
    return components_from_solution(sys, beta, grids, tree_index)


def fit_ensemble_hfd(ensemble: Ensemble, data, params: SolveParams = SolveParams(),
                     threads: int = 1) -> Decomposition:
    """Decompose every tree independently and sum components per subset."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[1] != ensemble.n_features:
        raise ValueError(
            f"data has {data.shape[1]} columns but the model has {ensemble.n_features} features")
    if not np.isfinite(data).all():
        raise ValueError("data contains non-finite values")

    def job(i):
        return fit_tree_hfd(ensemble.trees[i], data, params, i)

    idx = range(len(ensemble.trees))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(job, idx))  # map keeps tree order
    else:
        parts = [job(i) for i in idx]

    constant = ensemble.base_offset
    components: dict = {}
    for tc in parts:
        constant += tc.constant
        for J, tab in tc.tables.items():
            components.setdefault(J, []).append(tab)
    meta = {
        "d_I": params.d_I, "d_T": params.d_T, "d_V": params.d_V,
        "n": int(data.shape[0]), "n_trees": len(parts),
        "fit_residual": math.sqrt(sum(tc.fit_residual ** 2 for tc in parts)),
    }
    return Decomposition(ensemble.n_features, constant,
                         dict(sorted(components.items(), key=lambda kv: (len(kv[0]), kv[0]))),
                         meta)
