"""Explicit marching reconstruction of the Kohn-Sham potential.

At step ``q`` the target second derivative of the density at ``t_q`` and the
current Kohn-Sham orbitals define ``S = K V``; the solved mean-zero potential
is then held constant while the orbitals advance to ``t_{q+1}``. A Lipschitz
guard restarts the whole march with a larger ``L`` when two consecutive
potentials differ by more than ``L dt``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import (BoundOverflow, InconsistentInitialState, LipschitzBudgetExceeded,
                     StencilFault, VRepresentabilityBreakdown)
from .forcebalance import KERNEL_TOL, SIGMA_FLOOR, current_expectations, force_balance
from .oracle import DensityTrace, central_dn, exact_d2n, exact_dn, measure_density, stencil_d2n
from .propagator import KSState, ManyBodyState, _Hamiltonian, _step_many_body, evolve_ks, orthonormalize

LOG_FLOAT_MAX = math.log(np.finfo(float).max)


@dataclass(frozen=True)
class MarchConfig:
    """Step grid, Lipschitz budget and target accuracy for one march."""

    z: int = 100
    t0: float = 0.0
    t1: float = 1.0
    L: float = 1.0
    eps: float = 0.05
    restart_growth: float = 2.0
    max_restarts: int = 8
    source_mode: str = "exact"
    guard_slack: float = 1e-8
    stencil_h: float | None = None
    sigma_floor: float = SIGMA_FLOOR
    kernel_tol: float | None = KERNEL_TOL
    record_states: bool = False

    def __post_init__(self):
        if self.z < 1:
            raise ValueError("z must be a positive integer")
        if not self.t1 > self.t0:
            raise ValueError("need t1 > t0")
        if not (self.L > 0 and self.eps > 0):
            raise ValueError("L and eps must be positive")
        if self.restart_growth <= 1:
            raise ValueError("restart_growth must exceed 1")
        if self.source_mode not in ("exact", "stencil"):
            raise ValueError(f"unknown source_mode {self.source_mode!r}")

    @property
    def dt(self):
        return (self.t1 - self.t0) / self.z

    def time(self, q):
        return self.t0 + q * self.dt


@dataclass
class ReconstructionResult:
    """Per-step record of a march.

    ``potentials`` and ``diagnostics`` have one entry per step ``q < z``;
    time-indexed densities have ``z + 1`` rows, the last at ``t1``.
    """

    times: np.ndarray
    potentials: np.ndarray
    ks_densities: np.ndarray
    target_densities: np.ndarray
    density_error: np.ndarray
    diagnostics: list
    K: np.ndarray
    restarts: int
    L: float
    config: MarchConfig
    ks_states: list | None = None
    projected_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def z(self):
        return self.potentials.shape[0]

    @property
    def max_kappa(self):
        return max(d.kappa for d in self.diagnostics)

    @property
    def max_E_L(self):
        return max(d.E_L for d in self.diagnostics)


class ExactSource:
    """Targets from the propagated interacting state (``<i[H, i[H, n]]>``)."""

    def __init__(self, model, basis, psi0, substeps=4):
        self.model = model
        self.basis = basis
        self.substeps = substeps
        self._ham = _Hamiltonian(model, basis)
        self._states = [ManyBodyState(psi0.amplitudes, psi0.t)]

    def state(self, q, t):
        while len(self._states) <= q:
            prev = self._states[-1]
            t_next = prev.t + (t - prev.t) / (q - len(self._states) + 1)
            psi = _step_many_body(prev.amplitudes, self._ham, prev.t, t_next, self.substeps)
            self._states.append(ManyBodyState(psi, t_next))
        return self._states[q]

    def density(self, q, t):
        return measure_density(self.state(q, t), self.basis)

    def d2n(self, q, t):
        return exact_d2n(self.state(q, t), self.model, self.basis, ham=self._ham)

    def initial_data(self, t0):
        s = self.state(0, t0)
        return measure_density(s, self.basis), exact_dn(s, self.model, self.basis)

    @property
    def states(self):
        return list(self._states)


class StencilSource:
    """Targets from a sampled (possibly noisy) density trace.

    The stencil is centred on the latest trace sample at or before ``t_q``;
    when the trace is coarser than the march this holds the estimate constant
    between samples.
    """

    def __init__(self, trace, h):
        self.trace = trace
        self.h = float(h)

    def _anchor(self, t):
        i = self.trace.find(t)
        if i is None:
            i = int(np.searchsorted(self.trace.times, t, side="right")) - 1
            if i < 0:
                raise StencilFault(f"trace starts after t={t!r}")
        return i

    def density(self, q, t):
        return self.trace.values[self._anchor(t)]

    def d2n(self, q, t):
        return stencil_d2n(self.trace, self.trace.times[self._anchor(t)], self.h)

    def initial_data(self, t0):
        return self.trace.at(t0), central_dn(self.trace, t0)


@dataclass(frozen=True)
class ConsistencyReport:
    passed: bool
    density_residual: np.ndarray
    current_residual: np.ndarray
    tol: float


def check_initial_consistency(phi0, source, T, tol=1e-8):
    """Check that ``phi0`` reproduces ``n(t0)`` and ``dn/dt(t0)`` within ``tol``.

    ``source`` is a DensityTrace (derivative by central difference) or any
    object with ``initial_data(t0)`` returning ``(n, dn)``.
    """
    if isinstance(source, DensityTrace):
        n0, dn0 = source.at(phi0.t), central_dn(source, phi0.t)
    else:
        n0, dn0 = source.initial_data(phi0.t)
    dres = phi0.density - n0
    cres = current_expectations(phi0, T) - dn0
    passed = bool(np.max(np.abs(dres)) <= tol and np.max(np.abs(cres)) <= tol)
    if not passed:
        raise InconsistentInitialState(
            f"initial Kohn-Sham state inconsistent: |dn|={np.max(np.abs(dres)):.3e}, "
            f"|dj|={np.max(np.abs(cres)):.3e} (tol {tol:.1e})",
            density_residual=dres, current_residual=cres)
    return ConsistencyReport(passed, dres, cres, tol)


def fit_initial_orbitals(n0, dn0, T, N, t0=0.0):
    """Orbitals matching a target density and its first time derivative.

    For ``N = 1`` the amplitudes are ``sqrt(n0)`` and the site phases are
    fitted by least squares to the lattice continuity equation. For ``N > 1``
    a general orbital matrix is fitted to both conditions; this is a
    heuristic with no uniqueness or existence guarantee and emits a warning.
    """
    n0 = np.asarray(n0, dtype=float)
    dn0 = np.asarray(dn0, dtype=float)
    T = np.asarray(T, dtype=float)
    M = n0.size
    if N == 1:
        amp = np.sqrt(np.clip(n0, 0.0, None))

        def resid(theta):
            phi = amp * np.exp(1j * np.concatenate([[0.0], theta]))
            return current_expectations(phi[:, None], T) - dn0

        sol = least_squares(resid, np.zeros(M - 1), xtol=1e-15, ftol=1e-15, gtol=1e-15)
        phi = amp * np.exp(1j * np.concatenate([[0.0], sol.x]))
        return KSState(phi[:, None], t0)

    warnings.warn("fit_initial_orbitals for N > 1 is experimental", stacklevel=2)
    _, vecs = np.linalg.eigh(T - 2.0 * np.diag(n0))
    start = vecs[:, :N]

    def unpack(x):
        A = (x[: M * N] + 1j * x[M * N:]).reshape(M, N)
        return orthonormalize(A)

    def resid(x):
        phi = unpack(x)
        dens = np.sum(np.abs(phi) ** 2, axis=1)
        return np.concatenate([dens - n0, current_expectations(phi, T) - dn0])

    x0 = np.concatenate([start.real.ravel(), start.imag.ravel() + 1e-3])
    sol = least_squares(resid, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return KSState(unpack(sol.x), t0)


class _LipschitzTrip(Exception):
    def __init__(self, step, jump):
        self.step = step
        self.jump = jump


def _march_once(phi0, source, model, cfg, L):
    T = model.T
    dt = cfg.dt
    kernel_tol = cfg.kernel_tol if cfg.source_mode == "exact" else None
    z, M = cfg.z, model.M
    potentials = np.empty((z, M))
    Ks = np.empty((z, M, M))
    ks_dens = np.empty((z + 1, M))
    tgt_dens = np.empty((z + 1, M))
    projected = np.empty(z)
    diags = []
    states = [phi0.orbitals.copy()] if cfg.record_states else None
    phi = phi0
    for q in range(z):
        t = cfg.time(q)
        ks_dens[q] = phi.density
        tgt_dens[q] = source.density(q, t)
        try:
            fb = force_balance(phi, source.d2n(q, t), model, floor=cfg.sigma_floor,
                               kernel_tol=kernel_tol)
        except VRepresentabilityBreakdown as exc:
            exc.step = q
            exc.args = (f"step {q} (t={t:.6g}): {exc.args[0]}",)
            raise
        if q > 0:
            jump = float(np.max(np.abs(fb.V - potentials[q - 1])))
            if jump > L * dt + cfg.guard_slack:
                raise _LipschitzTrip(q, jump)
        potentials[q] = fb.V
        Ks[q] = fb.K
        projected[q] = fb.diag.kernel_component
        diags.append(fb.diag)
        phi = evolve_ks(phi, T, fb.V, dt)
        if states is not None:
            states.append(phi.orbitals.copy())
    ks_dens[z] = phi.density
    tgt_dens[z] = source.density(z, cfg.t1)
    times = cfg.t0 + dt * np.arange(z + 1)
    err = np.sum(np.abs(ks_dens - tgt_dens), axis=1)
    return ReconstructionResult(times, potentials, ks_dens, tgt_dens, err, diags, Ks,
                                0, L, cfg, states, projected)


def march(phi0, source, model, cfg):
    """Reconstruct ``V_KS(t_q)`` for ``q = 0..z-1`` and the Kohn-Sham trajectory.

    ``source`` supplies ``density(q, t)`` and ``d2n(q, t)``; see ExactSource
    and StencilSource. Raises VRepresentabilityBreakdown (with ``step`` set)
    or LipschitzBudgetExceeded after ``cfg.max_restarts`` restarts.
    """
    L = cfg.L
    last = None
    for restart in range(cfg.max_restarts + 1):
        try:
            res = _march_once(phi0, source, model, cfg, L)
        except _LipschitzTrip as trip:
            last = trip
            L *= cfg.restart_growth
            continue
        res.restarts = restart
        return res
    raise LipschitzBudgetExceeded(
        f"Lipschitz guard still violated after {cfg.max_restarts} restarts "
        f"(step {last.step}, jump {last.jump:.3e}, L={L / cfg.restart_growth:.3e})",
        step=last.step, L=L / cfg.restart_growth)


def _log_expm1(x):
    """``log(exp(x) - 1)`` without overflow for large ``x``."""
    return x + math.log1p(-math.exp(-x)) if x > 1.0 else math.log(math.expm1(x))


def required_steps(L, M, eps, kappa, E_L):
    """Smallest ``z`` with ``(M L / (4 eps kappa E_L^2)) (exp(16 kappa E_L^2) - 1) <= z``."""
    if math.isinf(eps):
        return 0
    x = 16.0 * kappa * E_L ** 2
    log_val = math.log(M * L / (4.0 * eps * kappa * E_L ** 2)) + _log_expm1(x)
    if log_val > LOG_FLOAT_MAX:
        raise BoundOverflow(f"step-count bound astronomically large: log(z) = {log_val:.6g}",
                            log_value=log_val)
    return math.ceil(math.exp(log_val))


def required_precision(M, eps, c4, kappa, E_L):
    """Largest density precision ``delta_n`` allowed by the measurement bound."""
    if c4 == 0:
        return math.inf
    x = 16.0 * kappa * E_L ** 2
    prefactor = math.sqrt(2.0) * M * math.sqrt(c4) / (4.0 * eps * E_L ** 2)
    log_inv = 2.0 * math.log(prefactor) + 2.0 * _log_expm1(x)
    if log_inv > LOG_FLOAT_MAX:
        raise BoundOverflow(f"required precision astronomically small: log(1/delta_n) = {log_inv:.6g}",
                            log_value=-log_inv)
    return math.exp(-log_inv)
