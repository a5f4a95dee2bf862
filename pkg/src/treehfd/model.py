"""Tree-ensemble data model, JSON (de)serialization and prediction.

Trees are binary regression trees. A point goes to the left child iff
``x[feature] < threshold``, so a value equal to a threshold routes right.
Aggregation coefficients (learning rate, 1/M) are assumed to be already
folded into leaf values.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np


class ModelError(ValueError):
    """Base class for malformed model inputs."""


class ParseError(ModelError):
    """A model document does not follow the expected schema."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class StructureError(ModelError):
    """Node ids do not form a single, finite binary tree."""


class UnsupportedFeatureError(ModelError):
    """The source model uses a feature this package does not handle."""


@dataclass(frozen=True)
class TreeNode:
    id: int
    feature: int | None = None
    threshold: float | None = None
    left: int | None = None
    right: int | None = None
    value: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    @classmethod
    def leaf(cls, id: int, value: float) -> "TreeNode":
        return cls(id=id, value=float(value))

    @classmethod
    def split(cls, id: int, feature: int, threshold: float, left: int, right: int) -> "TreeNode":
        return cls(id=id, feature=int(feature), threshold=float(threshold), left=left, right=right)


@dataclass(frozen=True)
class Tree:
    """Immutable binary tree; ``nodes`` is kept sorted by id."""

    nodes: tuple[TreeNode, ...]
    root: int = 0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda nd: nd.id)))
        _check_tree(self)

    @cached_property
    def by_id(self) -> dict[int, TreeNode]:
        return {nd.id: nd for nd in self.nodes}

    def node(self, node_id: int) -> TreeNode:
        try:
            return self.by_id[node_id]
        except KeyError:
            raise StructureError(f"dangling child id {node_id}") from None

    def depth(self) -> int:
        best = 0
        stack = [(self.root, 0)]
        while stack:
            nid, d = stack.pop()
            nd = self.by_id[nid]
            if nd.is_leaf:
                best = max(best, d)
            else:
                stack.append((nd.left, d + 1))
                stack.append((nd.right, d + 1))
        return best

    def split_features(self) -> set[int]:
        return {nd.feature for nd in self.nodes if not nd.is_leaf}

    @cached_property
    def _arrays(self):
        # compact array form used by the vectorized router
        pos = {nd.id: i for i, nd in enumerate(self.nodes)}
        m = len(self.nodes)
        feature = np.full(m, -1, dtype=np.int64)
        threshold = np.zeros(m)
        left = np.full(m, -1, dtype=np.int64)
        right = np.full(m, -1, dtype=np.int64)
        value = np.zeros(m)
        for i, nd in enumerate(self.nodes):
            if nd.is_leaf:
                value[i] = nd.value
            else:
                feature[i] = nd.feature
                threshold[i] = nd.threshold
                left[i] = pos[nd.left]
                right[i] = pos[nd.right]
        return feature, threshold, left, right, value, pos[self.root]

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Index (into ``nodes``) of the leaf reached by every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        feature, threshold, left, right, _, root = self._arrays
        cur = np.full(X.shape[0], root, dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = feature[cur] >= 0
        while active.any():
            idx = rows[active]
            c = cur[idx]
            go_left = X[idx, feature[c]] < threshold[c]
            cur[idx] = np.where(go_left, left[c], right[c])
            active = feature[cur] >= 0
        return cur

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self._arrays[4][self.apply(X)]


def _check_tree(tree: Tree) -> None:
    ids = [nd.id for nd in tree.nodes]
    if len(set(ids)) != len(ids):
        raise StructureError("duplicate node ids")
    by_id = {nd.id: nd for nd in tree.nodes}
    if tree.root not in by_id:
        raise StructureError(f"root id {tree.root} not among nodes")
    seen: set[int] = set()
    stack = [tree.root]
    while stack:
        nid = stack.pop()
        if nid in seen:
            raise StructureError(f"node {nid} reached twice (cycle or shared child)")
        seen.add(nid)
        nd = by_id.get(nid)
        if nd is None:
            raise StructureError(f"dangling child id {nid}")
        if nd.is_leaf:
            if nd.value is None or not math.isfinite(nd.value):
                raise StructureError(f"leaf {nid} has a non-finite value")
        else:
            if nd.left is None or nd.right is None:
                raise StructureError(f"internal node {nid} lacks a child")
            if nd.threshold is None or not math.isfinite(nd.threshold):
                raise StructureError(f"node {nid} has a non-finite threshold")
            if nd.feature < 0:
                raise StructureError(f"node {nid} has a negative feature index")
            stack.extend((nd.left, nd.right))
    if seen != set(by_id):
        raise StructureError(f"unreachable nodes: {sorted(set(by_id) - seen)}")


@dataclass(frozen=True)
class Ensemble:
    trees: tuple[Tree, ...]
    base_offset: float = 0.0
    n_features: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "base_offset", float(self.base_offset))
        for i, t in enumerate(self.trees):
            feats = t.split_features()
            if feats and max(feats) >= self.n_features:
                raise StructureError(
                    f"tree {i} splits on feature {max(feats)} but n_features={self.n_features}"
                )

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(X.shape[0], self.base_offset)
        for t in self.trees:
            out += t.predict(X)
        return out


def predict_tree(tree: Tree, x: Sequence[float]) -> float:
    """Walk one point down ``tree`` and return the leaf value."""
    nd = tree.node(tree.root)
    while not nd.is_leaf:
        nd = tree.node(nd.left if x[nd.feature] < nd.threshold else nd.right)
    return nd.value


def predict(ensemble: Ensemble, x: Sequence[float]) -> float:
    total = ensemble.base_offset
    for t in ensemble.trees:
        total += predict_tree(t, x)
    return total


# ---------- native document ----------

def ensemble_to_dict(ensemble: Ensemble) -> dict[str, Any]:
    trees = []
    for t in ensemble.trees:
        nodes = []
        for nd in t.nodes:
            if nd.is_leaf:
                nodes.append({"id": nd.id, "leaf": nd.value})
            else:
                nodes.append({"id": nd.id, "feature": nd.feature, "threshold": nd.threshold,
                              "left": nd.left, "right": nd.right})
        trees.append({"nodes": nodes, "root": t.root})
    return {"n_features": ensemble.n_features, "base_offset": ensemble.base_offset, "trees": trees}


def serialize_ensemble(ensemble: Ensemble) -> str:
    # json uses repr() for floats, which is the shortest round-trip form
    return json.dumps(ensemble_to_dict(ensemble), indent=1, allow_nan=False)


def _get(doc: dict, key: str, path: str, kind):
    if not isinstance(doc, dict):
        raise ParseError(path, "expected an object")
    if key not in doc:
        raise ParseError(f"{path}.{key}", "missing key")
    val = doc[key]
    if kind is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError(f"{path}.{key}", "expected a number")
        val = float(val)
        if not math.isfinite(val):
            raise ParseError(f"{path}.{key}", "non-finite number")
    elif kind is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise ParseError(f"{path}.{key}", "expected an integer")
    elif not isinstance(val, kind):
        raise ParseError(f"{path}.{key}", f"expected {kind.__name__}")
    return val


def ensemble_from_dict(doc: Any) -> Ensemble:
    n_features = _get(doc, "n_features", "$", int)
    base = _get(doc, "base_offset", "$", float)
    trees = []
    for ti, tdoc in enumerate(_get(doc, "trees", "$", list)):
        tpath = f"$.trees[{ti}]"
        root = _get(tdoc, "root", tpath, int)
        nodes = []
        for ni, ndoc in enumerate(_get(tdoc, "nodes", tpath, list)):
            npath = f"{tpath}.nodes[{ni}]"
            nid = _get(ndoc, "id", npath, int)
            if "leaf" in ndoc:
                nodes.append(TreeNode.leaf(nid, _get(ndoc, "leaf", npath, float)))
            else:
                nodes.append(TreeNode.split(
                    nid,
                    _get(ndoc, "feature", npath, int),
                    _get(ndoc, "threshold", npath, float),
                    _get(ndoc, "left", npath, int),
                    _get(ndoc, "right", npath, int),
                ))
        trees.append(Tree(tuple(nodes), root))
    return Ensemble(tuple(trees), base, n_features)


def parse_ensemble(text: str) -> Ensemble:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"invalid JSON ({exc})") from None
    return ensemble_from_dict(doc)


# ---------- boosted-tree JSON dump ----------

_FEATURE_RE = re.compile(r"^f(\d+)$")
_CATEGORICAL_KEYS = ("categories", "categories_nodes", "categories_segments", "categories_sizes")


def _dump_feature(name: Any, path: str) -> int:
    if isinstance(name, int) and not isinstance(name, bool):
        return name
    if isinstance(name, str):
        m = _FEATURE_RE.match(name)
        if m:
            return int(m.group(1))
        if name.isdigit():
            return int(name)
    raise ModelError(f"{path}.split: cannot map feature name {name!r} to an index (expected 'f<k>')")


def import_boosted_dump(text: str | list, base_offset: float = 0.0,
                        n_features: int | None = None) -> Ensemble:
    """Build an :class:`Ensemble` from an array-of-trees JSON dump.

    Each tree is a nested node document: internal nodes carry ``split``,
    ``split_condition``, ``yes``, ``no`` and ``children``; leaves carry
    ``leaf``. ``yes`` is taken as the left branch (``x < split_condition``).
    Missing-value routing (``missing``) is ignored. ``n_features`` defaults
    to the largest referenced feature index plus one.
    """
    doc = json.loads(text) if isinstance(text, str) else text
    if not isinstance(doc, list):
        raise ParseError("$", "expected an array of trees")
    trees = []
    max_feat = -1
    for ti, tdoc in enumerate(doc):
        if isinstance(tdoc, str):
            tdoc = json.loads(tdoc)
        nodes: list[TreeNode] = []
        stack = [(tdoc, f"$[{ti}]")]
        root = None
        while stack:
            nd, path = stack.pop()
            if not isinstance(nd, dict) or "nodeid" not in nd:
                raise ParseError(path, "node without 'nodeid'")
            nid = nd["nodeid"]
            if root is None:
                root = nid
            if nd.get("split_type") == "categorical" or any(k in nd for k in _CATEGORICAL_KEYS):
                raise UnsupportedFeatureError(f"{path}: categorical splits are not supported")
            if "leaf" in nd:
                if any(k in nd for k in ("split", "children", "yes", "no")):
                    raise ModelError(f"{path}: node has both leaf and split fields")
                nodes.append(TreeNode.leaf(nid, _get(nd, "leaf", path, float)))
                continue
            for key in ("split", "split_condition", "yes", "no", "children"):
                if key not in nd:
                    raise ModelError(f"{path}: internal node lacks '{key}'")
            feat = _dump_feature(nd["split"], path)
            max_feat = max(max_feat, feat)
            children = nd["children"]
            if not isinstance(children, list) or len(children) != 2:
                raise ModelError(f"{path}.children: expected two children")
            child_ids = {c.get("nodeid") for c in children if isinstance(c, dict)}
            if child_ids != {nd["yes"], nd["no"]}:
                raise ModelError(f"{path}: yes/no ids do not match children")
            nodes.append(TreeNode.split(nid, feat, _get(nd, "split_condition", path, float),
                                        nd["yes"], nd["no"]))
            for ci, c in enumerate(children):
                stack.append((c, f"{path}.children[{ci}]"))
        trees.append(Tree(tuple(nodes), root))
    if n_features is None:
        n_features = max_feat + 1
    return Ensemble(tuple(trees), base_offset, n_features)


def stump(feature: int, threshold: float, left: float, right: float) -> Tree:
    """Two-leaf tree; handy for tests and fixtures."""
    return Tree((TreeNode.split(0, feature, threshold, 1, 2),
                 TreeNode.leaf(1, left), TreeNode.leaf(2, right)), 0)
