"""Fitted decompositions: evaluation, summaries and JSON round trip.

Per-tree tables are kept separate rather than merged into one refined
grid, so a component is a sum of piecewise-constant pieces, one per
contributing tree.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .model import ParseError


@dataclass(frozen=True, eq=False)
class TreeTable:
    """One tree's piecewise-constant function over the grid of ``J``."""

    J: tuple
    cuts: tuple      # one sorted cut array per variable of J
    beta: np.ndarray  # shape = (len(c) + 1 for c in cuts)

    def cell_index(self, X: np.ndarray) -> tuple:
        return tuple(np.searchsorted(c, X[:, j], side="right") for c, j in zip(self.cuts, self.J))

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return self.beta[self.cell_index(X)]

    def __eq__(self, other):
        return (isinstance(other, TreeTable) and self.J == other.J
                and len(self.cuts) == len(other.cuts)
                and all(np.array_equal(a, b) for a, b in zip(self.cuts, other.cuts))
                and np.array_equal(self.beta, other.beta))


def _as_rows(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=float))


def _key(J) -> tuple:
    return tuple(sorted(int(j) for j in J))


@dataclass
class Decomposition:
    n_features: int
    constant: float
    components: dict  # J -> list[TreeTable]
    meta: dict = field(default_factory=dict)

    def subsets(self) -> list:
        return list(self.components)

    def component(self, J, X) -> np.ndarray:
        """Values of the component over ``J`` at every row of ``X``."""
        X = _as_rows(X)
        J = _key(J)
        if not J:
            return np.full(X.shape[0], self.constant)
        if not np.isfinite(X[:, list(J)]).all():
            raise ValueError("non-finite coordinates")
        out = np.zeros(X.shape[0])
        for tab in self.components.get(J, ()):
            out += tab.evaluate(X)
        return out

    def predict(self, X) -> np.ndarray:
        X = _as_rows(X)
        out = np.full(X.shape[0], self.constant)
        for J in self.components:
            out += self.component(J, X)
        return out

    def variance(self, J, X) -> float:
        X = _as_rows(X)
        if X.shape[0] == 0:
            raise ValueError("empty data")
        return float(np.var(self.component(J, X)))


def eval_component(dec: Decomposition, J, x) -> float:
    return float(dec.component(J, x)[0])


def eval_sum(dec: Decomposition, x) -> float:
    return float(dec.predict(x)[0])


def component_variance(dec: Decomposition, J, data) -> float:
    return dec.variance(J, data)


# ---------- JSON document ----------

def _num(v: float):
    if math.isinf(v):
        return "INF" if v > 0 else "-INF"
    return v


def decomposition_to_dict(dec: Decomposition) -> dict[str, Any]:
    comps = []
    for J, tabs in dec.components.items():
        trees = []
        for tab in tabs:
            trees.append({
                "cuts": {str(j): [float(c) for c in cuts] for j, cuts in zip(J, tab.cuts)},
                "beta": [float(b) for b in tab.beta.ravel()],
            })
        comps.append({"vars": list(J), "trees": trees})
    meta = {k: _num(v) if isinstance(v, float) else v for k, v in dec.meta.items()}
    return {"n_features": dec.n_features, "constant": dec.constant,
            "components": comps, "meta": meta}


def export_decomposition(dec: Decomposition) -> str:
    return json.dumps(decomposition_to_dict(dec), indent=1, allow_nan=False)


def _float_list(val, path):
    if not isinstance(val, list):
        raise ParseError(path, "expected an array")
    out = []
    for i, v in enumerate(val):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ParseError(f"{path}[{i}]", "expected a finite number")
        out.append(float(v))
    return out


def decomposition_from_dict(doc: Any) -> Decomposition:
    if not isinstance(doc, dict):
        raise ParseError("$", "expected an object")
    for key in ("n_features", "constant", "components"):
        if key not in doc:
            raise ParseError(f"$.{key}", "missing key")
    n_features = doc["n_features"]
    if isinstance(n_features, bool) or not isinstance(n_features, int):
        raise ParseError("$.n_features", "expected an integer")
    constant = _float_list([doc["constant"]], "$.constant")[0]
    comps: dict = {}
    if not isinstance(doc["components"], list):
        raise ParseError("$.components", "expected an array")
    for ci, cdoc in enumerate(doc["components"]):
        path = f"$.components[{ci}]"
        if not isinstance(cdoc, dict) or "vars" not in cdoc or "trees" not in cdoc:
            raise ParseError(path, "expected an object with 'vars' and 'trees'")
        J = cdoc["vars"]
        if (not isinstance(J, list) or not J or any(not isinstance(j, int) or isinstance(j, bool) for j in J)
                or list(J) != sorted(set(J)) or J[-1] >= n_features or J[0] < 0):
            raise ParseError(f"{path}.vars", "expected sorted distinct feature indices")
        J = tuple(J)
        tabs = []
        for ti, tdoc in enumerate(cdoc["trees"]):
            tpath = f"{path}.trees[{ti}]"
            if not isinstance(tdoc, dict) or "cuts" not in tdoc or "beta" not in tdoc:
                raise ParseError(tpath, "expected an object with 'cuts' and 'beta'")
            cuts = []
            for j in J:
                if str(j) not in tdoc["cuts"]:
                    raise ParseError(f"{tpath}.cuts", f"missing variable {j}")
                c = np.array(_float_list(tdoc["cuts"][str(j)], f"{tpath}.cuts.{j}"))
                if np.any(np.diff(c) <= 0):
                    raise ParseError(f"{tpath}.cuts.{j}", "cuts must be strictly increasing")
                cuts.append(c)
            shape = tuple(len(c) + 1 for c in cuts)
            beta = np.array(_float_list(tdoc["beta"], f"{tpath}.beta"))
            if beta.size != int(np.prod(shape)):
                raise ParseError(f"{tpath}.beta", f"expected {int(np.prod(shape))} values")
            tabs.append(TreeTable(J, tuple(cuts), beta.reshape(shape)))
        comps[J] = tabs
    meta = doc.get("meta", {})
    meta = {k: (math.inf if v == "INF" else -math.inf if v == "-INF" else v) for k, v in meta.items()}
    return Decomposition(n_features, constant, comps, meta)


def import_decomposition(text: str) -> Decomposition:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError("$", f"invalid JSON ({exc})") from None
    return decomposition_from_dict(doc)


# ---------- curves ----------

def _axis_grid(dec: Decomposition, j: int, spec, data) -> np.ndarray:
    if spec is not None and not isinstance(spec, (int, np.integer)):
        return np.asarray(spec, dtype=float)
    n = 256 if spec is None else int(spec)
    if n < 1:
        raise ValueError("grid needs at least one point")
    if data is not None:
        return np.quantile(_as_rows(data)[:, j], np.linspace(0.0, 1.0, n))
    cuts = [c for J, tabs in dec.components.items() if j in J
            for tab in tabs for c in tab.cuts[J.index(j)]]
    if not cuts:
        lo, hi = -1.0, 1.0
    else:
        lo, hi = min(cuts), max(cuts)
        pad = 0.1 * (hi - lo) if hi > lo else 1.0
        lo, hi = lo - pad, hi + pad
    return np.linspace(lo, hi, n)


def component_curve(dec: Decomposition, J, grid=None, data=None) -> list[tuple]:
    """Tabulate a component with ``|J| <= 2`` on a grid.

    ``grid`` is a point count (default 256) or, for ``|J| == 1``, explicit
    values (a pair of value lists for ``|J| == 2``). With ``data`` the grid
    follows the data quantiles instead of spanning the cut points.
    Returns rows ``(x1[, x2], value)``.
    """
    J = _key(J)
    if len(J) > 2:
        raise ValueError("curves are only tabulated for |J| <= 2")
    if not J:
        return [(dec.constant,)]
    if len(J) == 1:
        specs = [grid]
    elif grid is None or isinstance(grid, (int, np.integer)):
        specs = [grid, grid]
    else:
        specs = list(grid)
    axes = [_axis_grid(dec, j, s, data) for j, s in zip(J, specs)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.zeros((mesh[0].size, dec.n_features))
    for j, m in zip(J, mesh):
        X[:, j] = m.ravel()
    vals = dec.component(J, X)
    return [tuple(float(X[i, j]) for j in J) + (float(vals[i]),) for i in range(len(vals))]


def curve_csv(dec: Decomposition, J, rows) -> str:
    J = _key(J)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{k + 1}" for k in range(len(J))] + ["value"])
    for r in rows:
        w.writerow([repr(v) for v in r])
    return buf.getvalue()
