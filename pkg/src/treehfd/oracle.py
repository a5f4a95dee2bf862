"""Dense reference solvers for small instances (used by the test suite)."""

from __future__ import annotations

from itertools import combinations

import numpy as np
import scipy.linalg

from .model import Tree
from .solver import assemble, build_system

MAX_COLUMNS = 2000


def dense_tree_hfd(tree: Tree, data, subsets, grids) -> np.ndarray:
    """Minimal-norm least-squares coefficients of the dense constraint matrix.

    Uses a complete orthogonal factorization (QR with column pivoting,
    rank cut at 1e-12) instead of the ridge-shifted solvers.
    """
    sys = assemble(tree, data, subsets, grids)
    if sys.n_columns > MAX_COLUMNS:
        raise ValueError(f"{sys.n_columns} columns exceed the dense limit {MAX_COLUMNS}")
    beta, *_ = scipy.linalg.lstsq(sys.dense(), sys.targets, cond=1e-12, lapack_driver="gelsy")
    return beta


def exact_hfd_discrete(values, probs) -> dict:
    """Tree decomposition of a function on a fully enumerated grid.

    ``values`` and ``probs`` are arrays of the same shape, one axis per
    variable. Every subset of the axes gets a component, an array over the
    subgrid of its variables; ``()`` maps to the constant.
    """
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape:
        raise ValueError("value and probability tables differ in shape")
    if np.any(probs <= 0) or abs(probs.sum() - 1) > 1e-12:
        raise ValueError("probabilities must be positive and sum to 1")
    d = values.ndim
    sig = np.array(list(np.ndindex(*values.shape)), dtype=np.int64).reshape(-1, d)
    subsets = [J for size in range(d + 1) for J in combinations(range(d), size)]
    sys = build_system(sig, probs.ravel(), values.ravel(), subsets, list(range(d)), values.shape)
    beta, *_ = scipy.linalg.lstsq(sys.dense(), sys.targets, cond=1e-14, lapack_driver="gelsy")
    out = {(): float(beta[0])}
    for J, blk in sys.blocks.items():
        full = np.zeros(int(np.prod(blk.shape)))
        full[blk.cells] = beta[blk.offset: blk.offset + len(blk.cells)]
        out[J] = full.reshape(blk.shape)
    return out
