"""Analytic error bounds and cost estimates, and their comparison with runs.

Every bound is a pure function of its inputs. Large exponentials are
evaluated in log space; a result that does not fit in a float raises
BoundOverflow carrying the logarithm of the value.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import BoundOverflow, BoundViolation
from .fock import slater_amplitudes
from .marcher import LOG_FLOAT_MAX, required_precision, required_steps

EXPONENT_NOTE = (
    "The printed cost formulas carry exp(64 kappa E_L^2) for the classical stage and "
    "exp(16 kappa E_L^2) for the quantum stage, while the explicit derivations give "
    "exp(16 kappa E_L^2) for the classical stage (z M^3) and exp(64 kappa E_L^2) for "
    "the quantum stage (z delta_n^-3/2). Both variants are reported."
)


def unitary_error_bound(V1, V2, t0, t1):
    """``(t1 - t0) * max_s |V1(s) - V2(s)|_inf`` for potentials sampled on a common grid."""
    V1 = np.atleast_2d(np.asarray(V1, dtype=float))
    V2 = np.atleast_2d(np.asarray(V2, dtype=float))
    if V1.shape != V2.shape:
        raise ValueError("potential traces must share a grid")
    return (t1 - t0) * float(np.max(np.abs(V1 - V2)))


def linear_solve_error_bound(alpha, dB, dA_norm, x_norm):
    """``alpha (|db| + ||dA|| |x|)`` for perturbed linear systems."""
    return alpha * (dB + dA_norm * x_norm)


def stencil_error_bound(c4, delta_n):
    """``sqrt(2 c4 delta_n)``: error of the optimally spaced three-point stencil."""
    return math.sqrt(2.0 * c4 * delta_n)


def _d2n_error(delta_n, c4, d2n_error):
    if d2n_error is not None:
        return float(d2n_error)
    if delta_n == 0:
        return 0.0
    if c4 is None:
        raise ValueError("c4 is required to turn delta_n into a second-derivative error")
    return stencil_error_bound(c4, delta_n)


def recursion_bound(L, kappa, E_L, delta_n, z, k, c4=None, d2n_error=None, t_span=1.0):
    """Closed-form wavefunction error bound after ``k`` of ``z`` steps.

    ``delta_k = (L dt + kappa D) / (16 kappa E_L^2) * ((16 kappa E_L^2 dt + 1)^k - 1)``
    with ``dt = t_span / z`` and ``D`` the second-derivative error, taken as
    ``sqrt(2 c4 delta_n)`` unless given explicitly.
    """
    if not 0 <= k <= z:
        raise ValueError("need 0 <= k <= z")
    if k == 0:
        return 0.0
    dt = t_span / z
    D = _d2n_error(delta_n, c4, d2n_error)
    g = 16.0 * kappa * E_L ** 2
    log_growth = k * math.log1p(g * dt)
    if log_growth > LOG_FLOAT_MAX:
        raise BoundOverflow(f"recursion bound overflows: k log(1 + g dt) = {log_growth:.6g}",
                            log_value=log_growth)
    return (L * dt + kappa * D) / g * math.expm1(log_growth)


def recursion_bound_exponential(L, kappa, E_L, z, delta_n=0.0, c4=None, d2n_error=None, t_span=1.0):
    """Upper form ``(L dt / (16 kappa E_L^2) + D / (16 E_L^2)) (exp(16 kappa E_L^2 t_span) - 1)``."""
    dt = t_span / z
    D = _d2n_error(delta_n, c4, d2n_error)
    g = 16.0 * kappa * E_L ** 2
    x = g * t_span
    if x > LOG_FLOAT_MAX:
        raise BoundOverflow(f"exponential bound overflows: exponent {x:.6g}", log_value=x)
    return (L * dt / g + D / (16.0 * E_L ** 2)) * math.expm1(x)


def rescale_parameters(t_span, L, kappa, E_L):
    """Express ``(L, kappa, E_L)`` in units where the horizon is one.

    With ``t' = t / c`` the Hamiltonian scales as ``c H``, so energies scale by
    ``c``, ``kappa`` (an inverse of an energy-like matrix) by ``1/c`` and the
    Lipschitz constant of the potential by ``c^2``.
    """
    c = float(t_span)
    return L * c * c, kappa / c, E_L * c


@dataclass
class ErrorBudget:
    delta_phi: np.ndarray
    delta_z: float
    delta_z_exponential: float
    predicted_density_error: float
    cost_classical: float
    cost_quantum: float
    inputs: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        d["delta_phi"] = self.delta_phi.tolist()
        return d


def cost_estimates(L, eps, r, M, N, kappa, E_L, t_span=1.0, c4=1.0):
    """Order-of-magnitude operation counts ``(classical, quantum)``.

    classical is ``z M^3`` and quantum is ``r z delta_n^(-3/2)`` with unit
    simulation cost, where ``z`` and ``delta_n`` come from the step-count and
    precision bounds. ``N`` only enters the quantum stage through the
    simulation cost, which is taken as one here.
    """
    report = cost_report(L, eps, r, M, N, kappa, E_L, t_span, c4)
    return report["cost_classical"], report["cost_quantum"]


def cost_report(L, eps, r, M, N, kappa, E_L, t_span=1.0, c4=1.0):
    L_, kappa_, E_ = rescale_parameters(t_span, L, kappa, E_L) if t_span != 1.0 else (L, kappa, E_L)
    z = required_steps(L_, M, eps, kappa_, E_)
    delta_n = required_precision(M, eps, c4, kappa_, E_)
    log_classical = math.log(z) + 3.0 * math.log(M) if z > 0 else -math.inf
    if math.isinf(delta_n):
        log_quantum = -math.inf
    else:
        log_quantum = math.log(r) + math.log(max(z, 1)) - 1.5 * math.log(delta_n)
    if log_quantum > LOG_FLOAT_MAX:
        raise BoundOverflow(f"quantum cost astronomically large: log = {log_quantum:.6g}",
                            log_value=log_quantum)
    x = 16.0 * kappa_ * E_ ** 2
    return {
        "z": z,
        "delta_n": delta_n,
        "cost_classical": float(z * M ** 3),
        "cost_quantum": math.exp(log_quantum),
        "log_cost_classical": log_classical,
        "log_cost_quantum": log_quantum,
        "exponent_classical_derived": x,
        "exponent_classical_printed": 4.0 * x,
        "exponent_quantum_derived": 4.0 * x,
        "exponent_quantum_printed": x,
        "exponent_note": EXPONENT_NOTE,
        "kind": "order-of-magnitude operation counts, not wall-clock predictions",
        "inputs": {"L": L, "eps": eps, "r": r, "M": M, "N": N, "kappa": kappa,
                   "E_L": E_L, "t_span": t_span, "c4": c4},
    }


def error_budget(L, kappa, E_L, delta_n, c4, z, M, r=1, N=1, eps=0.05, t_span=1.0, d2n_error=None):
    """Per-step wavefunction bounds and the derived density and cost figures."""
    delta_phi = np.array([recursion_bound(L, kappa, E_L, delta_n, z, k, c4, d2n_error, t_span)
                          for k in range(z + 1)])
    try:
        exp_form = recursion_bound_exponential(L, kappa, E_L, z, delta_n, c4, d2n_error, t_span)
    except BoundOverflow:
        exp_form = math.inf
    try:
        classical, quantum = cost_estimates(L, eps, r, M, N, kappa, E_L, t_span, c4 if c4 else 1.0)
    except BoundOverflow:
        classical = quantum = math.inf
    return ErrorBudget(
        delta_phi=delta_phi,
        delta_z=float(delta_phi[-1]),
        delta_z_exponential=exp_form,
        predicted_density_error=2.0 * M * float(delta_phi[-1]),
        cost_classical=classical,
        cost_quantum=quantum,
        inputs={"L": L, "kappa": kappa, "E_L": E_L, "delta_n": delta_n, "c4": c4, "z": z,
                "M": M, "r": r, "N": N, "eps": eps, "t_span": t_span, "d2n_error": d2n_error},
    )


@dataclass
class BoundReport:
    observed_phi: np.ndarray
    observed_density: np.ndarray
    predicted_phi: np.ndarray
    predicted_density: np.ndarray
    violations: list
    budget: ErrorBudget

    @property
    def ok(self):
        return not self.violations

    @property
    def max_ratio(self):
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(self.predicted_phi > 0, self.observed_phi / self.predicted_phi, 0.0)
        return float(np.max(r))

    def to_dict(self):
        return {
            "ok": self.ok,
            "violations": self.violations,
            "max_ratio_phi": self.max_ratio,
            "observed_phi": self.observed_phi.tolist(),
            "observed_density": self.observed_density.tolist(),
            "predicted_phi": self.predicted_phi.tolist(),
            "predicted_density": self.predicted_density.tolist(),
            "budget": self.budget.to_dict(),
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=1)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def compare_bounds(result, truth_states, basis, L=None, kappa=None, E_L=None,
                   delta_n=0.0, c4=None, strict=True):
    """Observed per-step errors of a recorded march against the recursion bound.

    ``truth_states`` are the exact Fock amplitudes of the true Kohn-Sham
    state at each of the ``z + 1`` step times, in the same gauge as the
    marched potentials. ``L``, ``kappa`` and ``E_L`` default to the run's final
    Lipschitz constant and the largest diagnostics seen. A constant shift of the
    potential only changes the global phase, so each truth state is aligned to
    the marched state by the optimal global phase before differencing.
    """
    if result.ks_states is None:
        raise ValueError("run was not recorded with record_states=True")
    z = result.z
    if len(truth_states) != z + 1:
        raise ValueError("need one truth state per step time")
    L = result.L if L is None else L
    kappa = result.max_kappa if kappa is None else kappa
    E_L = result.max_E_L if E_L is None else E_L
    t_span = result.config.t1 - result.config.t0
    budget = error_budget(L, kappa, E_L, delta_n, c4, z, basis.M, t_span=t_span)
    occ = basis.occupations.astype(float)
    obs_phi = np.empty(z + 1)
    obs_n = np.empty(z + 1)
    for k, (orb, psi) in enumerate(zip(result.ks_states, truth_states)):
        amp = slater_amplitudes(orb, basis)
        psi = np.asarray(psi)
        ov = np.vdot(psi, amp)
        if abs(ov) > 0:
            psi = psi * (ov / abs(ov))
        obs_phi[k] = np.linalg.norm(amp - psi)
        obs_n[k] = np.sum(np.abs((np.abs(amp) ** 2 - np.abs(psi) ** 2) @ occ))
    pred_n = 2.0 * basis.M * budget.delta_phi
    violations = [int(k) for k in np.nonzero((obs_phi > budget.delta_phi + 1e-12)
                                             | (obs_n > pred_n + 1e-12))[0]]
    report = BoundReport(obs_phi, obs_n, budget.delta_phi, pred_n, violations, budget)
    if strict and violations:
        k = violations[0]
        raise BoundViolation(f"step {k}: observed |dPhi|={obs_phi[k]:.3e} exceeds bound "
                             f"{budget.delta_phi[k]:.3e}", step=k)
    return report
