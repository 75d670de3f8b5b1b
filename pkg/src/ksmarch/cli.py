"""Command-line runner.

    ksmarch generate    CONFIG [--out DIR] [--set key.path=value ...]
    ksmarch reconstruct CONFIG [--trace density.json] [--out DIR] [--set ...]
    ksmarch validate    RUN_DIR
    ksmarch sweep       CONFIG --grid march.z=50,100,200 [--jobs 4] [--out DIR] [--set ...]
    ksmarch bounds      --L 1 --kappa 0.5 --E-L 1 --M 2 --eps 0.1 [...]

Exit codes: 0 success, 1 validation failure, 2 config or usage error,
3 representability breakdown, 4 Lipschitz budget exhausted, 5 bound violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import yaml

from . import config as config_mod
from .bounds import cost_report, recursion_bound, recursion_bound_exponential, stencil_error_bound
from .errors import BoundOverflow, ConfigError
from .runner import (EXIT_CONFIG, EXIT_OK, expand_grid, run_generate, run_reconstruct,
                     run_single, run_validate)


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


def _load(args):
    return config_mod.load(args.config, args.set)


def cmd_generate(args):
    cfg = _load(args)
    out = args.out or cfg.output
    res = run_generate(cfg, out)
    print(f"wrote {len(res.trace.times)} samples to {os.path.join(out, 'density.csv')}")
    if res.h is not None:
        print(f"stencil h = {res.h:.6g}, c4 = {res.c4:.6g}" + (" (estimated)" if res.c4_heuristic else ""))
    return EXIT_OK


def cmd_reconstruct(args):
    cfg = _load(args)
    out = args.out or cfg.output
    if cfg.march.source_mode == "stencil" and args.trace is None:
        raise ConfigError("stencil mode needs --trace pointing at a density.json", "trace")
    outcome = run_reconstruct(cfg, out, trace_path=args.trace)
    if outcome.status != "ok":
        _err(f"{type(outcome.error).__name__}: {outcome.error}")
        return outcome.exit_code
    res = outcome.result
    print(f"z={res.z} restarts={res.restarts} L={res.L:.4g} max|dn|_1={res.density_error.max():.3e} "
          f"max kappa={res.max_kappa:.4g} max R={max(d.R for d in res.diagnostics):.4g}")
    print(f"run directory: {out}")
    return EXIT_OK


def cmd_validate(args):
    report = run_validate(args.run_dir)
    print(report.table())
    return report.exit_code


def _sweep_point(job):
    path, overrides, out = job
    try:
        cfg = config_mod.load(path, overrides)
        outcome = run_single(cfg, out)
    except ConfigError as exc:
        return {"status": "config_error", "exit_code": EXIT_CONFIG, "message": str(exc)}
    row = {"status": outcome.status, "exit_code": outcome.exit_code}
    if outcome.result is not None:
        res = outcome.result
        row.update({"max_density_error": float(res.density_error.max()), "max_kappa": res.max_kappa,
                    "max_R": max(d.R for d in res.diagnostics), "restarts": res.restarts, "L": res.L})
    elif outcome.error is not None:
        row["message"] = str(outcome.error)
    return row


def _parse_grid(items):
    grid = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"grid entry {item!r} is not key.path=v1,v2,...", "grid")
        key, values = item.split("=", 1)
        grid[key.strip()] = [yaml.safe_load(v) for v in values.split(",")]
    return grid


def cmd_sweep(args):
    base = _load(args)
    out = args.out or base.output
    points = expand_grid(_parse_grid(args.grid))
    os.makedirs(out, exist_ok=True)
    jobs = [(args.config, list(args.set) + pt, os.path.join(out, f"point_{i:03d}"))
            for i, pt in enumerate(points)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_sweep_point, jobs))
    else:
        rows = [_sweep_point(j) for j in jobs]
    cols = ["point", "overrides", "status", "exit_code", "max_density_error", "max_kappa", "max_R",
            "restarts", "L", "message"]
    with open(os.path.join(out, "summary.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for i, (pt, row) in enumerate(zip(points, rows)):
            w.writerow({"point": f"point_{i:03d}", "overrides": ";".join(pt), **row})
    failed = sum(r["exit_code"] != EXIT_OK for r in rows)
    print(f"{len(rows)} points, {failed} failed; summary in {os.path.join(out, 'summary.csv')}")
    return EXIT_OK if failed == 0 else max(r["exit_code"] for r in rows)


def cmd_bounds(args):
    doc = {"inputs": {"L": args.L, "kappa": args.kappa, "E_L": args.E_L, "M": args.M, "eps": args.eps,
                      "delta_n": args.delta_n, "c4": args.c4, "z": args.z, "r": args.r, "N": args.N,
                      "t_span": args.t_span}}
    D = stencil_error_bound(args.c4, args.delta_n) if args.delta_n > 0 else 0.0
    doc["stencil_error"] = D
    try:
        doc["delta_z"] = recursion_bound(args.L, args.kappa, args.E_L, 0.0, args.z, args.z,
                                         d2n_error=D, t_span=args.t_span)
    except BoundOverflow as exc:
        doc["delta_z"] = {"overflow": True, "log_value": exc.log_value}
    try:
        doc["delta_z_exponential"] = recursion_bound_exponential(args.L, args.kappa, args.E_L, args.z,
                                                                 d2n_error=D, t_span=args.t_span)
    except BoundOverflow as exc:
        doc["delta_z_exponential"] = {"overflow": True, "log_value": exc.log_value}
    try:
        doc["cost"] = cost_report(args.L, args.eps, args.r, args.M, args.N, args.kappa, args.E_L,
                                  args.t_span, args.c4)
    except BoundOverflow as exc:
        doc["cost"] = {"overflow": True, "log_value": exc.log_value, "message": str(exc)}
    print(json.dumps(doc, indent=1, default=lambda x: None if isinstance(x, float) and math.isinf(x) else x))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="ksmarch", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("config", help="YAML experiment config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key by dotted path (repeatable)")
        sp.add_argument("--out", help="output directory (default: config 'output')")

    sp = sub.add_parser("generate", help="propagate the interacting system and write the density trace")
    with_config(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("reconstruct", help="march the Kohn-Sham potential and write a run directory")
    with_config(sp)
    sp.add_argument("--trace", help="density.json written by 'generate' (stencil mode)")
    sp.set_defaults(func=cmd_reconstruct)

    sp = sub.add_parser("validate", help="re-check a run directory from its files")
    sp.add_argument("run_dir")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("sweep", help="run a grid of overrides")
    with_config(sp)
    sp.add_argument("--grid", action="append", default=[], required=True, metavar="KEY=V1,V2",
                    help="grid axis (repeatable; cartesian product)")
    sp.add_argument("--jobs", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bounds", help="evaluate the analytic error and cost bounds")
    sp.add_argument("--L", type=float, required=True)
    sp.add_argument("--kappa", type=float, required=True)
    sp.add_argument("--E-L", dest="E_L", type=float, required=True)
    sp.add_argument("--M", type=int, required=True)
    sp.add_argument("--eps", type=float, default=0.05)
    sp.add_argument("--delta-n", dest="delta_n", type=float, default=0.0)
    sp.add_argument("--c4", type=float, default=1.0)
    sp.add_argument("--z", type=int, default=100)
    sp.add_argument("--r", type=int, default=1)
    sp.add_argument("--N", type=int, default=1)
    sp.add_argument("--t-span", dest="t_span", type=float, default=1.0)
    sp.set_defaults(func=cmd_bounds)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(str(exc))
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
