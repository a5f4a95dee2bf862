"""Deterministic first-order gradient boosting for squared loss.

Exact greedy splits on midpoints between consecutive distinct values.
Ties go to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Ensemble, Tree, TreeNode

# gains below this fraction of the node's sum of squares are float noise
_GAIN_RTOL = 1e-12


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 100
    max_depth: int = 6
    learning_rate: float = 0.3
    min_samples_leaf: int = 1
    min_gain: float = 0.0
    seed: int = 0  # reserved; training is deterministic

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if self.min_gain < 0:
            raise ValueError("min_gain must be >= 0")


def best_split(values: np.ndarray, residuals: np.ndarray, min_samples_leaf: int = 1):
    """Best squared-error split of one sorted column.

    Returns ``(threshold, gain)``; ``(None, 0.0)`` when no admissible
    split exists. ``gain`` is the drop in the sum of squared residuals.
    """
    values = np.asarray(values, dtype=float)
    r = np.asarray(residuals, dtype=float)
    n = len(values)
    if n < 2:
        return None, 0.0
    # candidate cut after position i (left = [0..i]) where values change
    cut = np.flatnonzero(values[1:] > values[:-1])
    nl = cut + 1
    ok = (nl >= min_samples_leaf) & (n - nl >= min_samples_leaf)
    cut, nl = cut[ok], nl[ok]
    if len(cut) == 0:
        return None, 0.0
    csum = np.cumsum(r)
    total = csum[-1]
    sl = csum[cut]
    sr = total - sl
    gain = sl * sl / nl + sr * sr / (n - nl) - total * total / n
    gain[gain < _GAIN_RTOL * (float(r @ r) + 1e-300)] = 0.0
    i = int(np.argmax(gain))  # first maximum = lowest threshold
    thr = 0.5 * (values[cut[i]] + values[cut[i] + 1])
    return float(thr), float(gain[i])


class _Builder:
    def __init__(self, X, order, cfg):
        self.X = X
        self.order = order  # per-feature argsort of all rows
        self.cfg = cfg
        self.nodes: list[TreeNode] = []

    def grow(self, rows_mask, r, depth):
        """Grow the subtree over ``rows_mask``; returns its root id."""
        nid = len(self.nodes)
        self.nodes.append(None)
        idx = np.flatnonzero(rows_mask)
        best = None
        if depth < self.cfg.max_depth and len(idx) >= 2 * self.cfg.min_samples_leaf:
            for f in range(self.X.shape[1]):
                o = self.order[f][rows_mask[self.order[f]]]
                thr, gain = best_split(self.X[o, f], r[o], self.cfg.min_samples_leaf)
                if thr is not None and (best is None or gain > best[2]):
                    best = (f, thr, gain)
        if best is None or best[2] < self.cfg.min_gain:
            self.nodes[nid] = TreeNode.leaf(nid, self.cfg.learning_rate * float(r[idx].mean()))
            return nid
        f, thr, gain = best
        go_left = self.X[:, f] < thr
        lid = self.grow(rows_mask & go_left, r, depth + 1)
        rid = self.grow(rows_mask & ~go_left, r, depth + 1)
        left, right = self.nodes[lid], self.nodes[rid]
        # a split with no gain whose children are both leaves only adds a
        # useless cut; zero-gain splits are kept when they enable deeper ones
        if left.is_leaf and right.is_leaf and gain <= self.cfg.min_gain:
            del self.nodes[nid:]
            self.nodes.append(TreeNode.leaf(nid, self.cfg.learning_rate * float(r[idx].mean())))
            return nid
        self.nodes[nid] = TreeNode.split(nid, f, thr, lid, rid)
        return nid


def fit_tree(X: np.ndarray, r: np.ndarray, cfg: GbtConfig, order=None) -> Tree:
    if order is None:
        order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
    b = _Builder(X, order, cfg)
    b.grow(np.ones(X.shape[0], dtype=bool), r, 0)
    return Tree(tuple(b.nodes), 0)


def fit_gbt(X, y, cfg: GbtConfig = GbtConfig()) -> Ensemble:
    """Fit a boosted ensemble of regression trees with squared loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be n x p and y of length n")
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise ValueError("non-finite values in training data")
    base = float(y.mean())
    p = X.shape[1]
    if np.all(y == y[0]):
        return Ensemble((), base, p)
    order = [np.argsort(X[:, f], kind="stable") for f in range(p)]
    pred = np.full(len(y), base)
    trees = []
    for _ in range(cfg.n_trees):
        r = y - pred
        t = fit_tree(X, r, cfg, order)
        trees.append(t)
        pred = pred + t.predict(X)
    return Ensemble(tuple(trees), base, p)


def staged_mse(ensemble: Ensemble, X, y) -> np.ndarray:
    """Training MSE after 0, 1, ..., M trees."""
    X = np.asarray(X, dtype=float)
    pred = np.full(X.shape[0], ensemble.base_offset)
    out = [np.mean((y - pred) ** 2)]
    for t in ensemble.trees:
        pred = pred + t.predict(X)
        out.append(np.mean((y - pred) ** 2))
    return np.array(out)
