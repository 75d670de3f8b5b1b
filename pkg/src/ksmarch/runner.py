"""End-to-end pipeline: generate -> reconstruct -> validate, with on-disk artifacts.

A run directory contains::

    potentials.csv   t, V_1..V_M           (mean-zero Kohn-Sham potential per step)
    density.csv      t, n_1..n_M           (Kohn-Sham density, z + 1 rows)
    target.csv       t, n_1..n_M           (target density at the same times)
    source.csv       t, S_1..S_M           (force-balance source per step)
    K.csv            t, K_11, K_12, ..., K_MM (row-major)
    diagnostics.csv  t, kappa, E_L, R, sigma_min, residual, sigma_max, cond_2,
                     cond_inf, kernel_component, density_error
    bounds.json      error budget and, for non-interacting runs, the observed errors
    manifest.json    config, seeds, versions, status and error code

Every float is written with 17 significant digits so files replay exactly.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import os
import platform
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bounds import compare_bounds, error_budget
from .config import build_model, march_config, time_window
from .errors import (BoundOverflow, ConfigError, InconsistentInitialState, InconsistentSource,
                     KSMarchError, LipschitzBudgetExceeded, VRepresentabilityBreakdown)
from .fock import build_basis, build_hamiltonian, slater_amplitudes
from .forcebalance import Diagnostics, build_S
from .marcher import (ExactSource, StencilSource, check_initial_consistency,
                      fit_initial_orbitals, march)
from .oracle import (DensityTrace, NoiseSpec, choose_stencil_h, estimate_c4, exact_dn,
                     generate_trace, measure_density)
from .propagator import KSState, ManyBodyState, ground_orbitals

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_BREAKDOWN = 3
EXIT_LIPSCHITZ = 4
EXIT_BOUND = 5

ERROR_CODES = {
    ConfigError: ("config_error", EXIT_CONFIG),
    VRepresentabilityBreakdown: ("v_representability_breakdown", EXIT_BREAKDOWN),
    InconsistentSource: ("inconsistent_source", EXIT_BREAKDOWN),
    LipschitzBudgetExceeded: ("lipschitz_budget_exceeded", EXIT_LIPSCHITZ),
    InconsistentInitialState: ("inconsistent_initial_state", EXIT_CONFIG),
}


def error_code(exc):
    for cls, code in ERROR_CODES.items():
        if isinstance(exc, cls):
            return code
    return ("error", 1)


def _fmt(x):
    return format(float(x), ".17g")


def write_table(path, header, times, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for t, row in zip(times, rows):
        w.writerow([_fmt(t)] + [_fmt(x) for x in np.ravel(row)])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_table(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path} is empty")
    header = rows[0]
    data = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
    return header, data


def site_header(prefix, M):
    return ["t"] + [f"{prefix}_{j + 1}" for j in range(M)]


def versions():
    import numpy
    import scipy
    return {"ksmarch": __version__, "python": platform.python_version(),
            "numpy": numpy.__version__, "scipy": scipy.__version__}


def initial_states(cfg, model, basis):
    """Interacting initial state and a consistent Kohn-Sham state at ``t0``."""
    t0 = time_window(cfg)[0]
    init = cfg.initial
    if init.kind == "ground_state":
        phi = ground_orbitals(model.T, model.V(t0), model.N)
    elif init.kind == "sites":
        phi = np.zeros((model.M, model.N), dtype=complex)
        for col, site in enumerate(sorted(init.sites)):
            phi[site, col] = 1.0
    elif init.kind == "orbitals":
        re = np.asarray(init.orbitals_re, dtype=float)
        im = np.zeros_like(re) if init.orbitals_im is None else np.asarray(init.orbitals_im, dtype=float)
        phi = (re + 1j * im).reshape(model.M, model.N)
        gram = phi.conj().T @ phi
        if np.max(np.abs(gram - np.eye(model.N))) > 1e-10:
            raise ConfigError("orbitals must be orthonormal", "initial.orbitals_re")
    else:
        H = build_hamiltonian(model, basis, t0).toarray()
        _, vecs = np.linalg.eigh(H)
        psi = ManyBodyState(vecs[:, 0], t0)
        n0 = measure_density(psi, basis)
        dn0 = exact_dn(psi, model, basis)
        return psi, fit_initial_orbitals(n0, dn0, model.T, model.N, t0)
    phi0 = KSState(phi, t0)
    return ManyBodyState(slater_amplitudes(phi, basis), t0), phi0


@dataclass
class GenerateResult:
    trace: DensityTrace
    h: float | None
    c4: float | None
    c4_heuristic: bool
    spacing: float
    files: list = field(default_factory=list)


def stencil_parameters(cfg, model, basis, psi0, spacing):
    """Half-width ``h`` (a multiple of ``spacing``) and the ``c4`` it was chosen from."""
    o = cfg.oracle
    c4, heuristic = o.c4, False
    if o.h is not None:
        h = o.h
    else:
        if c4 is None:
            t0, t1, _ = time_window(cfg)
            fine = spacing / 4.0
            count = int(round((t1 - t0) / fine)) + 1
            grid = t0 + fine * np.arange(count)
            c4 = estimate_c4(generate_trace(model, basis, psi0, grid, substeps=o.substeps))
            heuristic = True
        h = choose_stencil_h(o.delta_n, c4)
    steps = max(1, int(round(h / spacing)))
    return steps * spacing, c4, heuristic


def run_generate(cfg, out_dir=None):
    """Propagate the interacting system and write density.csv / density.json."""
    model = build_model(cfg)
    basis = build_basis(model.M, model.N)
    psi0, _ = initial_states(cfg, model, basis)
    t0, t1, _ = time_window(cfg)
    dt = (t1 - t0) / cfg.march.z
    spacing = cfg.oracle.spacing or dt
    h, c4, heuristic = None, cfg.oracle.c4, False
    pad = 2
    if cfg.march.source_mode == "stencil":
        h, c4, heuristic = stencil_parameters(cfg, model, basis, psi0, spacing)
        pad = max(pad, int(round(h / spacing)))
    count = int(round((t1 - t0) / spacing))
    times = t0 + spacing * np.arange(-pad, count + pad + 1)
    o = cfg.oracle
    noise = NoiseSpec(o.delta_n, o.r, o.seed) if o.delta_n > 0 else None
    trace = generate_trace(model, basis, psi0, times, substeps=o.substeps, noise=noise)
    trace = DensityTrace(trace.times, trace.values, trace.N, noise,
                         {"h": h, "c4": c4, "c4_heuristic": heuristic, "spacing": spacing,
                          "t0": t0, "t1": t1})
    res = GenerateResult(trace, h, c4, heuristic, spacing)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        trace.to_csv(os.path.join(out_dir, "density.csv"))
        trace.to_json(os.path.join(out_dir, "density.json"))
        res.files = ["density.csv", "density.json"]
    return res


@dataclass
class RunOutcome:
    status: str
    exit_code: int
    result: object = None
    bound_report: object = None
    error: Exception | None = None
    files: list = field(default_factory=list)


def _write_manifest(out_dir, cfg, status, code, extra):
    manifest = {
        "status": status,
        "error_code": code,
        "config": cfg.to_dict(),
        "seeds": {"oracle": cfg.oracle.seed},
        "versions": versions(),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    manifest.update(extra)
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)


def run_reconstruct(cfg, out_dir, trace=None, trace_path=None):
    """Reconstruct the Kohn-Sham potential and write a self-describing run directory.

    In ``exact`` mode the target comes from the propagated interacting state;
    in ``stencil`` mode from ``trace`` or ``trace_path`` (a density.json).
    """
    if cfg.march.source_mode == "stencil" and trace is None:
        if trace_path is None or not os.path.exists(trace_path):
            raise ConfigError(f"trace file not found: {trace_path}", "trace")
        trace = DensityTrace.from_json(trace_path)
    model = build_model(cfg)
    basis = build_basis(model.M, model.N)
    psi0, phi0 = initial_states(cfg, model, basis)
    os.makedirs(out_dir, exist_ok=True)
    stencil_h = None
    if cfg.march.source_mode == "stencil":
        stencil_h = trace.meta.get("h") or cfg.oracle.h
        if stencil_h is None:
            raise ConfigError("trace carries no stencil half-width; set oracle.h", "oracle.h")
        source = StencilSource(trace, stencil_h)
    else:
        source = ExactSource(model, basis, psi0, substeps=cfg.oracle.substeps)
    mcfg = march_config(cfg, model, record_states=True, stencil_h=stencil_h)
    extra = {"time_scale": time_window(cfg)[2], "source_mode": mcfg.source_mode}
    try:
        check_initial_consistency(phi0, source, model.T, tol=cfg.initial.consistency_tol)
        res = march(phi0, source, model, mcfg)
    except KSMarchError as exc:
        name, code = error_code(exc)
        extra.update({"error": name, "message": str(exc), "step": getattr(exc, "step", None)})
        _write_manifest(out_dir, cfg, "error", code, extra)
        return RunOutcome("error", code, error=exc, files=["manifest.json"])

    M = model.M
    steps_t = res.times[:-1]
    write_table(os.path.join(out_dir, "potentials.csv"), site_header("V", M), steps_t, res.potentials)
    write_table(os.path.join(out_dir, "density.csv"), site_header("n", M), res.times, res.ks_densities)
    write_table(os.path.join(out_dir, "target.csv"), site_header("n", M), res.times, res.target_densities)
    sources = np.array([build_S(source.d2n(q, t), res.ks_states[q], model.T)
                        for q, t in enumerate(steps_t)])
    write_table(os.path.join(out_dir, "source.csv"), site_header("S", M), steps_t, sources)
    write_table(os.path.join(out_dir, "K.csv"),
                ["t"] + [f"K_{i + 1}_{j + 1}" for i in range(M) for j in range(M)],
                steps_t, res.K.reshape(len(steps_t), -1))
    diag_rows = [d.as_row() + [e] for d, e in zip(res.diagnostics, res.density_error[:-1])]
    write_table(os.path.join(out_dir, "diagnostics.csv"),
                ["t"] + list(Diagnostics.ROW_HEADER) + ["density_error"], steps_t, diag_rows)

    bound_doc, report = _bounds_document(cfg, model, basis, res, source, trace)
    with open(os.path.join(out_dir, "bounds.json"), "w") as fh:
        json.dump(bound_doc, fh, indent=1, sort_keys=True)

    final_err = float(res.density_error.max())
    extra.update({
        "restarts": res.restarts, "L_final": res.L, "z": res.z, "dt": mcfg.dt,
        "max_density_error": final_err, "eps": mcfg.eps, "eps_met": final_err <= mcfg.eps,
        "max_R": max(d.R for d in res.diagnostics), "stencil_h": stencil_h,
        "files": ["potentials.csv", "density.csv", "target.csv", "source.csv", "K.csv",
                  "diagnostics.csv", "bounds.json"],
    })
    _write_manifest(out_dir, cfg, "ok", EXIT_OK, extra)
    return RunOutcome("ok", EXIT_OK, result=res, bound_report=report,
                      files=extra["files"] + ["manifest.json"])


def _bounds_document(cfg, model, basis, res, source, trace):
    delta_n = cfg.oracle.delta_n if cfg.march.source_mode == "stencil" else 0.0
    c4 = None
    if trace is not None:
        c4 = trace.meta.get("c4")
    c4 = c4 if c4 is not None else cfg.oracle.c4
    if delta_n > 0 and c4 is None:
        c4 = 1.0
    doc = {"L": res.L, "kappa": res.max_kappa, "E_L": res.max_E_L, "delta_n": delta_n, "c4": c4}
    report = None
    try:
        budget = error_budget(res.L, res.max_kappa, res.max_E_L, delta_n, c4, res.z, model.M,
                              r=cfg.oracle.r, N=model.N, eps=cfg.march.eps,
                              t_span=res.config.t1 - res.config.t0)
        doc["budget"] = budget.to_dict()
    except BoundOverflow as exc:
        doc["budget"] = {"overflow": True, "log_value": exc.log_value, "message": str(exc)}
        return doc, None
    truth = None
    if isinstance(source, ExactSource) and not model.interacting:
        truth = [s.amplitudes for s in source.states[: res.z + 1]]
    if truth is not None:
        report = compare_bounds(res, truth, basis, delta_n=delta_n, c4=c4, strict=False)
        doc["comparison"] = report.to_dict()
    return doc, report


@dataclass
class Check:
    name: str
    status: str
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list

    @property
    def exit_code(self):
        if any(c.status == "fail" and c.name == "bound_dominance" for c in self.checks):
            return EXIT_BOUND
        if any(c.status == "fail" for c in self.checks):
            return EXIT_VALIDATION
        return EXIT_OK

    def table(self):
        width = max(len(c.name) for c in self.checks)
        lines = [f"{'check'.ljust(width)}  status  detail"]
        lines += [f"{c.name.ljust(width)}  {c.status.upper():6}  {c.detail}" for c in self.checks]
        return "\n".join(lines)


def run_validate(run_dir):
    """Re-check the invariants of a run from its persisted files only."""
    checks = []

    def load_json(name):
        try:
            with open(os.path.join(run_dir, name)) as fh:
                return json.load(fh)
        except (OSError, ValueError) as exc:
            checks.append(Check(f"file:{name}", "fail", f"unreadable: {exc}"))
            return None

    def load_csv(name):
        try:
            return read_table(os.path.join(run_dir, name))
        except (OSError, ValueError) as exc:
            checks.append(Check(f"file:{name}", "fail", f"unreadable: {exc}"))
            return None, None

    manifest = load_json("manifest.json")
    if manifest is None:
        return ValidationReport(checks)
    if manifest.get("status") != "ok":
        checks.append(Check("run_status", "fail", f"run ended with {manifest.get('error')}: "
                                                  f"{manifest.get('message')}"))
        return ValidationReport(checks)
    checks.append(Check("run_status", "pass", "ok"))
    _, V = load_csv("potentials.csv")
    _, Kt = load_csv("K.csv")
    _, S = load_csv("source.csv")
    dh, diag = load_csv("diagnostics.csv")
    bounds = load_json("bounds.json")
    if any(x is None for x in (V, Kt, S, diag, bounds)):
        return ValidationReport(checks)
    V, S = V[:, 1:], S[:, 1:]
    M = V.shape[1]
    K = Kt[:, 1:].reshape(-1, M, M)
    if not (K.shape[0] == V.shape[0] == S.shape[0] == diag.shape[0]):
        checks.append(Check("lengths", "fail", "per-step files disagree in length"))
        return ValidationReport(checks)
    checks.append(Check("lengths", "pass", f"{V.shape[0]} steps, M={M}"))

    scale = max(1.0, float(np.max(np.abs(K))))
    sym = float(np.max(np.abs(K - K.transpose(0, 2, 1))))
    checks.append(Check("K_symmetric", "pass" if sym <= 1e-12 * scale else "fail", f"max |K-K^T| = {sym:.2e}"))
    ker = float(np.max(np.abs(K.sum(axis=2))))
    checks.append(Check("K_kernel", "pass" if ker <= 1e-12 * scale else "fail", f"max |K 1| = {ker:.2e}"))
    KV = np.einsum("qij,qj->qi", K, V)
    gauge = float(np.max(np.abs(np.einsum("qij,qj->qi", K, V + 1.0) - KV)))
    checks.append(Check("gauge_covariance", "pass" if gauge <= 1e-12 * scale * M else "fail",
                        f"max |K(V+1) - KV| = {gauge:.2e}"))
    vscale = max(1.0, float(np.max(np.abs(V))))
    mean = float(np.max(np.abs(V.sum(axis=1))))
    checks.append(Check("mean_zero_V", "pass" if mean <= 1e-12 * vscale * M else "fail",
                        f"max |1^T V| = {mean:.2e}"))
    PS = S - S.mean(axis=1, keepdims=True)
    resid = float(np.max(np.abs(KV - PS)))
    checks.append(Check("force_balance_residual", "pass" if resid <= 1e-8 * max(1.0, np.max(np.abs(S))) else "fail",
                        f"max |KV - PS| = {resid:.2e}"))
    col = {name: i for i, name in enumerate(dh)}
    kappa = diag[:, col["kappa"]]
    compat = np.max(np.abs(V), axis=1) - kappa * np.max(np.abs(PS), axis=1)
    worst = float(np.max(compat))
    checks.append(Check("kappa_compatibility", "pass" if worst <= 1e-9 else "fail",
                        f"max(|V| - kappa |PS|) = {worst:.2e}"))
    R = diag[:, col["R"]]
    R_warn = manifest.get("config", {}).get("validate", {}).get("R_warn", 100.0)
    checks.append(Check("R_threshold", "warn" if np.max(R) > R_warn else "pass",
                        f"max R = {np.max(R):.3g} (warn above {R_warn:g})"))
    eps = manifest.get("eps")
    err = manifest.get("max_density_error")
    if eps is not None and err is not None:
        checks.append(Check("density_error", "pass" if err <= eps else "warn", f"max |dn|_1 = {err:.3e} (eps {eps:g})"))
    comp = bounds.get("comparison")
    if comp is not None and manifest.get("config", {}).get("validate", {}).get("bound_check", True):
        obs = np.asarray(comp["observed_phi"], dtype=float)
        pred = np.asarray(comp["predicted_phi"], dtype=float)
        obs_n = np.asarray(comp["observed_density"], dtype=float)
        pred_n = np.asarray(comp["predicted_density"], dtype=float)
        viol = np.nonzero((obs > pred + 1e-12) | (obs_n > pred_n + 1e-12))[0]
        detail = f"{viol.size} violating steps"
        if viol.size:
            detail += f" (first at step {int(viol[0])})"
        checks.append(Check("bound_dominance", "fail" if viol.size else "pass", detail))
    return ValidationReport(checks)


def expand_grid(grid):
    """``{"march.z": [50, 100]}`` -> list of override lists (cartesian product)."""
    keys = list(grid)
    return [[f"{k}={v}" for k, v in zip(keys, combo)]
            for combo in itertools.product(*(grid[k] for k in keys))]


def run_single(cfg, out_dir):
    """generate (for stencil mode, into ``out_dir/trace``) then reconstruct into ``out_dir``."""
    trace = None
    if cfg.march.source_mode == "stencil":
        trace = run_generate(cfg, os.path.join(out_dir, "trace")).trace
    return run_reconstruct(cfg, out_dir, trace=trace)
