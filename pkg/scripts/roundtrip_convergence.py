"""Potential recovery error of the non-interacting round trip against step count."""

import argparse

from ksmarch.experiments import convergence_orders, roundtrip_bound_report, run_roundtrip


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--z", type=int, nargs="+", default=[50, 100, 200, 400])
    p.add_argument("--L", type=float, default=2.0)
    args = p.parse_args()
    runs = [run_roundtrip(z, L=args.L) for z in args.z]
    print(f"{'z':>6} {'max|V-V*|':>12} {'max|dn|_1':>12} {'kappa':>8} {'bound ratio':>12} {'s':>6}")
    for rt in runs:
        rep = roundtrip_bound_report(rt)
        print(f"{rt.z:6d} {rt.potential_error:12.4e} {rt.density_error:12.4e} {rt.max_kappa:8.3f} "
              f"{rep.max_ratio:12.3f} {rt.seconds:6.2f}")
    orders = convergence_orders([rt.potential_error for rt in runs])
    print("observed orders:", " ".join(f"{o:.3f}" for o in orders))


if __name__ == "__main__":
    main()
