"""Command-line entry point: ``treehfd <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import analytical
from .decomposition import component_curve, curve_csv, export_decomposition, import_decomposition
from .diagnostics import UndefinedMetricError, diagnose, residual_mse_ratio
from .model import ModelError, import_boosted_dump, parse_ensemble, serialize_ensemble
from .solver import SolveParams, SolverError, fit_ensemble_hfd
from .trainer import GbtConfig, fit_gbt


class CliError(Exception):
    pass


def read_csv(path: str) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None
    if not rows:
        raise CliError(f"{path}: empty file (header row required)")
    header = [h.strip() for h in rows[0]]
    data = []
    for ln, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CliError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise CliError(f"{path}:{ln}: non-numeric or missing value") from None
        if not all(math.isfinite(v) for v in vals):
            raise CliError(f"{path}:{ln}: non-finite value")
        data.append(vals)
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def write_text(path: str, text: str) -> None:
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror}") from None


def read_text(path: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror}") from None


def split_target(header, data, target):
    if target is None:
        return data
    if target not in header:
        raise CliError(f"target column {target!r} not in header")
    keep = [i for i, h in enumerate(header) if h != target]
    return data[:, keep], data[:, header.index(target)]


def features(header, data, target, n_features):
    if target is not None:
        data = split_target(header, data, target)[0]
    if data.shape[1] != n_features:
        raise CliError(f"feature-count mismatch: data has {data.shape[1]} columns, "
                       f"model expects {n_features}")
    if data.shape[0] == 0:
        raise CliError("no data rows")
    return data


def depth(text: str) -> float:
    if text.upper() in ("INF", "INFINITY"):
        return math.inf
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer or INF, got {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("depth must be >= 0")
    return v


def threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    env = os.environ.get("TREEHFD_THREADS")
    return max(1, int(env)) if env else 1


def cmd_train(args):
    header, data = read_csv(args.data)
    X, y = split_target(header, data, args.target)
    cfg = GbtConfig(n_trees=args.n_trees, max_depth=args.max_depth,
                    learning_rate=args.learning_rate, min_samples_leaf=args.min_samples_leaf)
    ens = fit_gbt(X, y, cfg)
    write_text(args.out, serialize_ensemble(ens))
    print(f"training MSE: {float(np.mean((ens.predict(X) - y) ** 2))!r}")


def cmd_fit(args):
    ens = parse_ensemble(read_text(args.model))
    header, data = read_csv(args.data)
    X = features(header, data, args.target, ens.n_features)
    params = SolveParams(d_I=args.d_i, d_T=args.d_t, d_V=args.d_v)
    dec = fit_ensemble_hfd(ens, X, params, threads=threads(args))
    write_text(args.out, export_decomposition(dec))
    try:
        print(f"residual MSE ratio: {residual_mse_ratio(dec, ens, X)!r}")
    except UndefinedMetricError:
        print("residual MSE ratio: NA (constant model)")


def cmd_diagnose(args):
    ens = parse_ensemble(read_text(args.model))
    dec = import_decomposition(read_text(args.dec))
    header, data = read_csv(args.data)
    X = features(header, data, args.target, ens.n_features)
    ref = None
    if args.reference:
        kind, _, rho = args.reference.partition(":")
        if kind != "analytical":
            raise CliError(f"unknown reference {args.reference!r} (expected analytical:RHO)")
        try:
            ref = analytical.reference(float(rho) if rho else 0.5)
        except ValueError:
            raise CliError(f"bad rho in {args.reference!r}") from None
        if ens.n_features != analytical.P:
            raise CliError("the analytical reference needs 6 features")
    report = diagnose(dec, ens, X, reference=ref, k=args.k)
    write_text(args.out, report.to_csv())
    if args.json:
        write_text(args.json, json.dumps(report.to_dict(), indent=1))
    print(f"residual MSE ratio: {report.residual_mse_ratio!r}")


def cmd_simulate(args):
    try:
        cfg = analytical.CaseConfig(n=args.n, rho=args.rho, noise_sd=args.noise_sd, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    X, y = analytical.sample_case(cfg)
    lines = [",".join([f"X{j + 1}" for j in range(analytical.P)] + ["y"])]
    lines += [",".join(repr(float(v)) for v in row) for row in np.column_stack([X, y])]
    write_text(args.out, "\n".join(lines) + "\n")


def cmd_import_xgb(args):
    ens = import_boosted_dump(read_text(args.dump), args.base_score, args.n_features)
    write_text(args.out, serialize_ensemble(ens))


def cmd_curve(args):
    dec = import_decomposition(read_text(args.dec))
    try:
        J = tuple(int(v) for v in args.vars.split(",") if v.strip())
    except ValueError:
        raise CliError(f"bad --vars {args.vars!r}") from None
    if any(j < 0 or j >= dec.n_features for j in J):
        raise CliError(f"--vars out of range for {dec.n_features} features")
    data = None
    if args.data:
        header, data = read_csv(args.data)
        data = features(header, data, args.target, dec.n_features)
    rows = component_curve(dec, J, grid=args.grid, data=data)
    write_text(args.out, curve_csv(dec, J, rows))


def cmd_verify(args):
    # compare the sparse solver with the dense oracle, tree by tree
    from .oracle import dense_tree_hfd
    from .partition import axis_partitions, collect_subsets
    from .solver import assemble, solve

    ens = parse_ensemble(read_text(args.model))
    header, data = read_csv(args.data)
    X = features(header, data, args.target, ens.n_features)
    params = SolveParams(d_I=args.d_i)
    worst = 0.0
    for i, t in enumerate(ens.trees):
        grids, subsets = axis_partitions(t), collect_subsets(t, params.d_I)
        a = solve(assemble(t, X, subsets, grids), params)
        b = dense_tree_hfd(t, X, subsets, grids)
        worst = max(worst, float(np.max(np.abs(a - b))))
    print(f"max coefficient difference: {worst!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treehfd",
                                description="Hoeffding functional decomposition of tree ensembles")
    p.add_argument("--threads", type=int, default=None,
                   help="worker cap (default: $TREEHFD_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    s = sub.add_parser("train", help="fit a boosted tree ensemble")
    s.add_argument("--data", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--n-trees", type=int, default=100)
    s.add_argument("--max-depth", type=int, default=6)
    s.add_argument("--learning-rate", type=float, default=0.3)
    s.add_argument("--min-samples-leaf", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("fit", help="decompose an ensemble")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--target", help="column to drop from the data")
    s.add_argument("--d-i", type=int, default=2)
    s.add_argument("--d-t", type=depth, default=math.inf)
    s.add_argument("--d-v", type=depth, default=math.inf)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("diagnose", help="compute decomposition metrics")
    s.add_argument("--model", required=True)
    s.add_argument("--dec", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--target", help="column to drop from the data")
    s.add_argument("--reference", help="analytical:RHO")
    s.add_argument("--k", type=int, default=10, help="neighbours for local variability")
    s.add_argument("--json", help="also write the report as JSON")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("simulate", help="sample the Gaussian benchmark")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--rho", type=float, default=0.5)
    s.add_argument("--noise-sd", type=float, default=0.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("import-xgb", help="convert a JSON tree dump")
    s.add_argument("--dump", required=True)
    s.add_argument("--base-score", type=float, default=0.0)
    s.add_argument("--n-features", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_import_xgb)

    s = sub.add_parser("curve", help="tabulate a component")
    s.add_argument("--dec", required=True)
    s.add_argument("--vars", required=True, help="j or j,k (0-based)")
    s.add_argument("--grid", type=int, default=None, help="points per axis (default 256)")
    s.add_argument("--data", help="use data quantiles for the grid")
    s.add_argument("--target", help="column to drop from the data")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_curve)

    s = sub.add_parser("verify")  # hidden: sparse solver vs dense oracle
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--target")
    s.add_argument("--d-i", type=int, default=2)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except (CliError, ModelError, SolverError, UndefinedMetricError, ValueError) as exc:
        print(f"treehfd {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
