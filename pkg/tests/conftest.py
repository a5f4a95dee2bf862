from pathlib import Path

import numpy as np
import pytest

from treehfd.model import Ensemble, Tree, TreeNode, stump

DATA = Path(__file__).parent / "data"


def stump_tree():
    return stump(0, 0.5, -1.0, 1.0)


def stump_data():
    return np.array([[0.2], [0.4], [0.6], [0.8]])


def xor_tree():
    return Tree((
        TreeNode.split(0, 0, 0.5, 1, 2),
        TreeNode.split(1, 1, 0.5, 3, 4),
        TreeNode.split(2, 1, 0.5, 5, 6),
        TreeNode.leaf(3, 1.0), TreeNode.leaf(4, -1.0),
        TreeNode.leaf(5, -1.0), TreeNode.leaf(6, 1.0),
    ))


def xor_data():
    return np.array([[0.25, 0.25], [0.25, 0.75], [0.75, 0.25], [0.75, 0.75]])


def random_tree(rng, p, depth, lo=0.0, hi=1.0, leaf_scale=1.0):
    """Random full-ish tree with thresholds drawn in (lo, hi)."""
    nodes = []

    def grow(d):
        nid = len(nodes)
        nodes.append(None)
        if d == depth or (d > 0 and rng.random() < 0.2):
            nodes[nid] = TreeNode.leaf(nid, float(np.round(rng.normal(0, leaf_scale), 3)))
            return nid
        f = int(rng.integers(p))
        thr = float(np.round(rng.uniform(lo, hi), 3))
        left = grow(d + 1)
        right = grow(d + 1)
        nodes[nid] = TreeNode.split(nid, f, thr, left, right)
        return nid

    grow(0)
    return Tree(tuple(nodes), 0)


@pytest.fixture
def stump_fixture():
    return stump_tree(), stump_data()


@pytest.fixture
def xor_fixture():
    return xor_tree(), xor_data()


@pytest.fixture
def dump_text():
    return (DATA / "boosted_dump.json").read_text()


def single(tree, n_features, base=0.0):
    return Ensemble((tree,), base, n_features)
