"""Randomized checks of the stencil error bound and the propagator stability bound."""

import argparse

from ksmarch.experiments import stencil_trials, unitary_trials


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--delta-n", type=float, default=1e-6)
    p.add_argument("--stencil-trials", type=int, default=100)
    p.add_argument("--unitary-trials", type=int, default=50)
    args = p.parse_args()
    trials, c4, h = stencil_trials(args.delta_n, args.stencil_trials)
    bad = sum(t.error > t.bound for t in trials)
    worst = max(t.error / t.bound for t in trials)
    print(f"stencil: c4={c4:.4g} h={h:.4g} bound={trials[0].bound:.3e} "
          f"violations={bad}/{len(trials)} max ratio={worst:.3f}")
    ut = unitary_trials(args.unitary_trials)
    bad = sum(t.observed > t.bound for t in ut)
    worst = max(t.observed / t.bound for t in ut if t.bound > 0)
    print(f"propagator: violations={bad}/{len(ut)} max ratio={worst:.3f}")


if __name__ == "__main__":
    main()
