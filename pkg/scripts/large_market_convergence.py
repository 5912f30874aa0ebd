#!/usr/bin/env python3
"""Sweep U_n for the power-decay large market and print the convergence table.

U_n is the minimal expected exponential disutility achievable with the
first n assets; it is nonincreasing and its doubling gaps shrink, which is
the numerical signature of convergence to the infinite-market optimum.
"""

import argparse

from nmvmopt.large_market import LargeMarketSpec, convergence_study
from nmvmopt.mixing import BoundedUniform


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kappa", type=float, default=0.5, help="premium scale")
    ap.add_argument("--p", type=float, default=1.1, help="premium decay exponent")
    ap.add_argument("--beta-kappa", type=float, default=0.3, help="index loading scale")
    ap.add_argument("--max-n", type=int, default=1024)
    ap.add_argument("--tolerance", type=float, default=1e-4)
    args = ap.parse_args()

    spec = LargeMarketSpec(
        gamma_seq=lambda i: args.kappa / i**args.p,
        mu_seq=lambda i: args.kappa / i**args.p,
        beta_seq=lambda i: args.beta_kappa / i,
        beta_bar_seq=lambda i: 1.0,
        mix=BoundedUniform(0.5, 1.5),
        max_n=args.max_n,
    )
    n_list = []
    n = 4
    while 2 * n <= args.max_n:
        n_list.append(n)
        n *= 2
    rows, converged = convergence_study(spec, n_list, tol=args.tolerance)

    print(f"{'n':>6} {'U_n':>14} {'U_n - U_2n':>14} {'d2 tail':>12}")
    for r in rows:
        print(f"{r.n:>6} {r.u_n:>14.8f} {r.gap_to_double:>14.3e} {r.d2_tail:>12.3e}")
    print(f"\nconverged at tolerance {args.tolerance}: {converged}")


if __name__ == "__main__":
    main()
