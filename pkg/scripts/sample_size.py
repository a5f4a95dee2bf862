"""Cumulated component MSE of the Gaussian benchmark as the sample grows."""
import argparse
import time

from treehfd.analytical import CaseConfig, reference, sample_case
from treehfd.diagnostics import component_mse
from treehfd.solver import SolveParams, fit_ensemble_hfd
from treehfd.trainer import GbtConfig, fit_gbt


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 1000, 5000])
    ap.add_argument("--rho", type=float, default=0.5)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--test-seed", type=int, default=2)
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    Xt, _ = sample_case(CaseConfig(n=10_000, rho=args.rho, seed=args.test_seed))
    ref = reference(args.rho)
    print(f"{'n':>7}{'cumulated MSE':>16}{'seconds':>10}")
    for n in args.sizes:
        t0 = time.perf_counter()
        X, y = sample_case(CaseConfig(n=n, rho=args.rho, seed=args.seed))
        ens = fit_gbt(X, y, GbtConfig())
        dec = fit_ensemble_hfd(ens, X, SolveParams(d_I=2), threads=args.threads)
        total = sum(component_mse(dec, ref, Xt).values())
        print(f"{n:>7}{total:>16.4f}{time.perf_counter() - t0:>10.1f}")


if __name__ == "__main__":
    main()
