"""Cartesian tree partitions, subset enumeration, pruning and cell lookup.

Each variable split on by a tree gets a sorted list of distinct cut
points ``s_1 < ... < s_m``; the intervals are ``(-inf, s_1)``,
``[s_t, s_{t+1})`` and ``[s_m, +inf)``. A cell of a variable subset is
the Cartesian product of one interval per variable.
"""

from __future__ import annotations

import math
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

from .model import Tree, TreeNode

SubsetKey = tuple  # sorted tuple of distinct variable indices
AxisGrid = dict    # variable -> np.ndarray of strictly increasing cuts

INF = math.inf


def axis_partitions(tree: Tree) -> dict[int, np.ndarray]:
    cuts: dict[int, set[float]] = {}
    for nd in tree.nodes:
        if not nd.is_leaf:
            cuts.setdefault(nd.feature, set()).add(nd.threshold)
    return {j: np.array(sorted(c)) for j, c in sorted(cuts.items())}


def n_intervals(grids: Mapping[int, np.ndarray], j: int) -> int:
    return len(grids[j]) + 1 if j in grids else 1


def grid_shape(grids: Mapping[int, np.ndarray], J: Iterable[int]) -> tuple[int, ...]:
    return tuple(n_intervals(grids, j) for j in J)


def interval_index(cuts: np.ndarray, values) -> np.ndarray:
    """Left-closed interval index: the number of cuts ``<= value``."""
    return np.searchsorted(cuts, values, side="right")


def locate(grids: Mapping[int, np.ndarray], x, J: SubsetKey) -> tuple[int, ...]:
    """Cell of point ``x`` in the grid over ``J``."""
    out = []
    for j in J:
        v = float(x[j])
        if not math.isfinite(v):
            raise ValueError(f"non-finite coordinate x[{j}]={v}")
        cuts = grids.get(j)
        out.append(0 if cuts is None else int(interval_index(cuts, v)))
    return tuple(out)


def locate_rows(grids: Mapping[int, np.ndarray], X: np.ndarray, J: SubsetKey) -> np.ndarray:
    """Vectorized :func:`locate`; returns an ``n x |J|`` integer array."""
    X = np.asarray(X, dtype=float)
    out = np.zeros((X.shape[0], len(J)), dtype=np.int64)
    for c, j in enumerate(J):
        col = X[:, j]
        if not np.isfinite(col).all():
            raise ValueError(f"non-finite values in column {j}")
        if j in grids:
            out[:, c] = interval_index(grids[j], col)
    return out


def _paths(tree: Tree):
    """Yield the list of split variables (with depth) along every root-to-leaf path."""
    stack = [(tree.root, 0, ())]
    while stack:
        nid, depth, path = stack.pop()
        nd = tree.node(nid)
        if nd.is_leaf:
            yield path
        else:
            path2 = path + ((nd.feature, depth),)
            stack.append((nd.right, depth + 1, path2))
            stack.append((nd.left, depth + 1, path2))


def collect_subsets(tree: Tree, d_I: int = 2, d_V: float = INF) -> list[SubsetKey]:
    """Variable subsets of size <= ``d_I`` found along the tree's paths.

    Only splits at depth ``< d_V`` (root depth 0) contribute. The result is
    closed under inclusion, always contains ``()``, and is sorted by size
    then lexicographically.
    """
    if d_I < 1 or d_V < 1:
        raise ValueError("d_I and d_V must be >= 1")
    found: set[SubsetKey] = {()}
    for path in _paths(tree):
        vars_ = sorted({f for f, depth in path if depth < d_V})
        for size in range(1, min(d_I, len(vars_)) + 1):
            found.update(combinations(vars_, size))
    # every subset of an enumerated subset already comes from the same path
    return sorted(found, key=lambda J: (len(J), J))


def prune_tree(tree: Tree, d_T: float, sample: np.ndarray) -> Tree:
    """Turn internal nodes at depth ``>= d_T`` into leaves.

    A new leaf takes the mean original prediction over the sample points
    routed to it, or the plain mean of its descendant leaves when no
    sample point reaches it.
    """
    if d_T < 0:
        raise ValueError("d_T must be >= 0")
    if d_T >= tree.depth():
        return tree
    sample = np.atleast_2d(np.asarray(sample, dtype=float))
    if sample.shape[0] == 0:
        raise ValueError("empty sample")
    preds = tree.predict(sample)

    def leaf_values(nid):
        nd = tree.node(nid)
        if nd.is_leaf:
            return [nd.value]
        return leaf_values(nd.left) + leaf_values(nd.right)

    nodes: list[TreeNode] = []
    stack = [(tree.root, 0, np.ones(sample.shape[0], dtype=bool))]
    while stack:
        nid, depth, mask = stack.pop()
        nd = tree.node(nid)
        if nd.is_leaf:
            nodes.append(nd)
        elif depth >= d_T:
            if mask.any():
                val = float(preds[mask].mean())
            else:
                val = float(np.mean(leaf_values(nid)))
            nodes.append(TreeNode.leaf(nid, val))
        else:
            nodes.append(nd)
            go_left = sample[:, nd.feature] < nd.threshold
            stack.append((nd.left, depth + 1, mask & go_left))
            stack.append((nd.right, depth + 1, mask & ~go_left))
    return Tree(tuple(nodes), tree.root)
