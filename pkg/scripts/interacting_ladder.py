"""Kohn-Sham reconstruction of two interacting electrons on a four-site chain."""

import argparse

import numpy as np

from ksmarch.experiments import run_ladder


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--z", type=int, nargs="+", default=[100, 200, 400])
    p.add_argument("--L", type=float, default=10.0)
    args = p.parse_args()
    print(f"{'z':>6} {'max|dn|_1':>12} {'max kappa':>10} {'max R':>8} {'restarts':>8} {'s':>6}")
    for z in args.z:
        res, seconds = run_ladder(z=z, L=args.L)
        R = np.array([d.R for d in res.diagnostics])
        print(f"{z:6d} {res.density_error.max():12.4e} {res.max_kappa:10.3f} {R.max():8.3f} "
              f"{res.restarts:8d} {seconds:6.2f}")


if __name__ == "__main__":
    main()
