"""Quality metrics for a fitted decomposition."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .decomposition import Decomposition
from .model import Ensemble


class UndefinedMetricError(ValueError):
    pass


# components whose spread is this small next to the output's are solver noise
FLAT_RTOL = 1e-12


def _flat(var: float, output_variance: float) -> bool:
    return var <= (FLAT_RTOL ** 2) * output_variance


def residual_mse_ratio(dec: Decomposition, ensemble: Ensemble, data) -> float:
    """MSE of the decomposition against the ensemble over Var of the ensemble."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    pred = ensemble.predict(data)
    var = float(np.var(pred))
    if var <= 0:
        raise UndefinedMetricError("ensemble predictions have zero variance")
    return float(np.mean((dec.predict(data) - pred) ** 2) / var)


@dataclass
class OrthogonalityReport:
    pairs: list = field(default_factory=list)  # (J, I, correlation)
    max_abs: float | None = None                # None when no interaction qualifies


def orthogonality_report(dec: Decomposition, data, var_threshold: float = 0.01,
                         output_variance: float | None = None) -> OrthogonalityReport:
    """Correlations between sizeable interactions and their sub-effects.

    An interaction qualifies when its variance is at least ``var_threshold``
    times the output variance (by default the variance of the decomposition's
    own predictions). Components with zero variance (up to solver noise,
    see ``FLAT_RTOL``) are skipped.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if data.shape[0] < 2:
        raise ValueError("need at least two rows")
    if output_variance is None:
        output_variance = float(np.var(dec.predict(data)))
    values = {J: dec.component(J, data) for J in dec.components}
    var = {J: float(np.var(v)) for J, v in values.items()}
    rep = OrthogonalityReport()
    for J in dec.components:
        if len(J) < 2 or _flat(var[J], output_variance) or var[J] < var_threshold * output_variance:
            continue
        for size in range(1, len(J)):
            for I in combinations(J, size):
                if I not in var or _flat(var[I], output_variance):
                    continue
                r = float(np.corrcoef(values[J], values[I])[0, 1])
                rep.pairs.append((J, I, r))
    if rep.pairs:
        rep.max_abs = max(abs(r) for _, _, r in rep.pairs)
    return rep


def _knn_variances(x: np.ndarray, f: np.ndarray, k: int) -> np.ndarray:
    """Per-row variance of ``f`` over the ``k`` nearest other rows along ``x``.

    ``f`` must be a function of ``x`` alone. Ties in distance go to the
    lower row index.
    """
    n = len(x)
    order = np.lexsort((np.arange(n), x))
    xs, fs = x[order], f[order]
    # rows sharing one x value form a block; keep their sorted row ids
    uniq, start = np.unique(xs, return_index=True)
    stop = np.append(start[1:], n)
    fval = fs[start]
    out = np.empty(n)
    for pos in range(n):
        i = order[pos]
        lo, hi = max(0, pos - k), min(n, pos + k + 1)
        d = np.abs(xs[lo:hi] - xs[pos])
        d[pos - lo] = np.inf  # exclude the row itself
        dk = np.partition(d, k - 1)[k - 1]
        inner = d < dk
        chosen = list(fs[lo:hi][inner])
        need = k - len(chosen)
        if dk == 0:
            chosen += [fs[pos]] * need
        else:
            blocks = []
            for v in np.unique(xs[lo:hi][d == dk]):
                b = np.searchsorted(uniq, v)
                blocks.append((order[start[b]:stop[b]], fval[b]))
            if len(blocks) == 1:
                chosen += [blocks[0][1]] * need
            else:
                ids = np.concatenate([blocks[0][0], blocks[1][0]])
                first = np.argsort(ids, kind="stable")[:need]
                n_left = int(np.sum(first < len(blocks[0][0])))
                chosen += [blocks[0][1]] * n_left + [blocks[1][1]] * (need - n_left)
        out[i] = np.var(chosen)
    return out


def local_variability(dec: Decomposition, data, k: int = 10,
                      output_variance: float | None = None) -> float:
    """Mean k-nearest-neighbour variance of main effects, relative to their variance.

    Neighbours are taken along the main effect's own variable; the row
    itself is excluded.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if k < 1 or n <= k:
        raise ValueError(f"need more than k={k} rows, got {n}")
    if output_variance is None:
        output_variance = float(np.var(dec.predict(data)))
    scores = []
    for J in dec.components:
        if len(J) != 1:
            continue
        f = dec.component(J, data)
        gvar = float(np.var(f))
        if gvar <= 0 or _flat(gvar, output_variance):
            continue
        scores.append(float(np.mean(_knn_variances(data[:, J[0]], f, k))) / gvar)
    if not scores:
        raise UndefinedMetricError("no main effect with positive variance")
    return float(np.mean(scores))


def component_mse(dec: Decomposition, reference, data, subsets=None) -> dict:
    """Per-subset MSE of the components against ``reference(J, X)``.

    ``data`` should be independent of the sample used to fit ``dec``.
    Subsets scored: those of ``dec``, plus ``subsets`` (or
    ``reference.subsets`` when present). The constant is not scored.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if subsets is None:
        subsets = getattr(reference, "subsets", ())
    keys = sorted(set(dec.components) | {tuple(sorted(J)) for J in subsets if J},
                  key=lambda J: (len(J), J))
    return {J: float(np.mean((dec.component(J, data) - np.asarray(reference(J, data))) ** 2))
            for J in keys}


@dataclass
class DiagnosticsReport:
    residual_mse_ratio: float
    orthogonality: OrthogonalityReport
    local_variability: float | None
    component_variances: dict
    component_mse: dict | None = None

    def rows(self) -> list[tuple[str, str, str]]:
        def name(J):
            return "+".join(str(j) for j in J)

        out = [("residual_mse_ratio", "", repr(self.residual_mse_ratio))]
        mx = self.orthogonality.max_abs
        out.append(("orthogonality_max_abs", "", "NA" if mx is None else repr(mx)))
        for J, I, r in self.orthogonality.pairs:
            out.append(("orthogonality", f"{name(J)}|{name(I)}", repr(r)))
        lv = self.local_variability
        out.append(("local_variability", "", "NA" if lv is None else repr(lv)))
        for J, v in self.component_variances.items():
            out.append(("component_variance", name(J), repr(v)))
        if self.component_mse is not None:
            for J, v in self.component_mse.items():
                out.append(("component_mse", name(J), repr(v)))
            out.append(("cumulated_mse", "", repr(sum(self.component_mse.values()))))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "name", "value"])
        w.writerows(self.rows())
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "residual_mse_ratio": self.residual_mse_ratio,
            "orthogonality": {
                "max_abs": self.orthogonality.max_abs,
                "pairs": [{"J": list(J), "I": list(I), "corr": r}
                          for J, I, r in self.orthogonality.pairs],
            },
            "local_variability": self.local_variability,
            "component_variances": {"+".join(map(str, J)): v
                                    for J, v in self.component_variances.items()},
            "component_mse": None if self.component_mse is None else
            {"+".join(map(str, J)): v for J, v in self.component_mse.items()},
        }


def diagnose(dec: Decomposition, ensemble: Ensemble, data, reference=None,
             k: int = 10, var_threshold: float = 0.01) -> DiagnosticsReport:
    data = np.atleast_2d(np.asarray(data, dtype=float))
    out_var = float(np.var(ensemble.predict(data)))
    try:
        lv = local_variability(dec, data, k, out_var)
    except (UndefinedMetricError, ValueError):
        lv = None
    return DiagnosticsReport(
        residual_mse_ratio=residual_mse_ratio(dec, ensemble, data),
        orthogonality=orthogonality_report(dec, data, var_threshold, out_var),
        local_variability=lv,
        component_variances={J: dec.variance(J, data) for J in dec.components},
        component_mse=None if reference is None else component_mse(dec, reference, data),
    )
