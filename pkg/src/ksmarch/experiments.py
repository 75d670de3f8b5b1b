"""Reference experiments shared by the acceptance tests and scripts/."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .bounds import compare_bounds, unitary_error_bound
from .fock import (LatticeModel, build_basis, build_density_ops, build_hamiltonian, chain_hopping,
                   slater_amplitudes)
from .marcher import ExactSource, MarchConfig, march
from .oracle import DensityTrace, NoiseSpec, choose_stencil_h, exact_d2n, stencil_d2n
from .propagator import KSState, ManyBodyState, expm_hermitian, ground_orbitals
from .waveforms import PotentialSchedule

ROUNDTRIP_STATIC = np.array([0.3, -0.1, 0.2, -0.4])
ROUNDTRIP_AMPLITUDE = np.array([0.6, -0.2, 0.1, -0.5])


def roundtrip_model(omega=2.0, phase=0.3):
    """Four-site chain, one electron, mean-zero sinusoidal drive with Lipschitz constant 1.2."""
    pot = PotentialSchedule("sinusoid", ROUNDTRIP_STATIC, ROUNDTRIP_AMPLITUDE,
                            {"omega": omega, "phase": phase})
    return LatticeModel(chain_hopping(4, 1.0), 1, pot)


@dataclass
class RoundTrip:
    z: int
    potential_error: float
    density_error: float
    max_kappa: float
    max_E_L: float
    restarts: int
    seconds: float
    result: object
    source: object


def run_roundtrip(z, L=2.0, substeps=8, model=None):
    """March a non-interacting system whose true potential is known by construction."""
    model = model or roundtrip_model()
    basis = build_basis(model.M, model.N)
    phi0 = ground_orbitals(model.T, model.V(0.0), model.N)
    psi0 = ManyBodyState(slater_amplitudes(phi0, basis), 0.0)
    start = time.perf_counter()
    source = ExactSource(model, basis, psi0, substeps=substeps)
    res = march(KSState(phi0, 0.0), source, model, MarchConfig(z=z, L=L, record_states=True))
    elapsed = time.perf_counter() - start
    true_V = np.array([model.V(t) for t in res.times[:-1]])
    true_V -= true_V.mean(axis=1, keepdims=True)
    err = float(np.max(np.abs(res.potentials - true_V)))
    return RoundTrip(z, err, float(res.density_error.max()), res.max_kappa, res.max_E_L,
                     res.restarts, elapsed, res, source)


def convergence_orders(errors):
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])


def roundtrip_bound_report(rt):
    """Compare the recorded march against the exact trajectory and the recursion bound."""
    basis = build_basis(rt.result.ks_states[0].shape[0], rt.result.ks_states[0].shape[1])
    truth = [s.amplitudes for s in rt.source.states[: rt.result.z + 1]]
    return compare_bounds(rt.result, truth, basis, strict=False)


def ladder_model():
    """Two electrons on a four-site chain with nearest-neighbour density-density repulsion."""
    pot = PotentialSchedule("sinusoid", np.array([0.2, -0.1, 0.1, -0.2]),
                            np.array([0.5, 0.0, 0.0, -0.5]), {"omega": 3.0})
    return LatticeModel(chain_hopping(4, 1.0), 2, pot, pairs=((0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)))


def run_ladder(z=400, L=10.0, substeps=4):
    model = ladder_model()
    basis = build_basis(4, 2)
    phi0 = ground_orbitals(model.T, model.V(0.0), 2)
    psi0 = ManyBodyState(slater_amplitudes(phi0, basis), 0.0)
    start = time.perf_counter()
    res = march(KSState(phi0, 0.0), ExactSource(model, basis, psi0, substeps), model,
                MarchConfig(z=z, L=L))
    return res, time.perf_counter() - start


def fourth_derivative_bound(H, basis):
    """``max_j ||(i ad_H)^4 n_j||_2``: a rigorous bound on every fourth time derivative
    of a site density under the time-independent Hamiltonian ``H``."""
    H = np.asarray(H)
    best = 0.0
    for op in build_density_ops(basis):
        A = op.toarray()
        for _ in range(4):
            A = 1j * (H @ A - A @ H)
        best = max(best, float(np.linalg.norm(A, 2)))
    return best


@dataclass
class StencilTrial:
    seed: int
    t: float
    error: float
    bound: float


def stencil_trials(delta_n=1e-6, count=100, M=3, N=1):
    """Noisy three-point estimates against the exact second derivative.

    The Hamiltonian is time independent so that the fourth-derivative bound
    ``c4`` can be computed exactly from nested commutators.
    """
    T = chain_hopping(M, 1.0)
    static = np.linspace(0.4, -0.4, M)
    model = LatticeModel(T, N, PotentialSchedule("constant", static))
    basis = build_basis(M, N)
    H = build_hamiltonian(model, basis).toarray()
    c4 = fourth_derivative_bound(H, basis)
    h = choose_stencil_h(delta_n, c4)
    bound = float(np.sqrt(2.0 * c4 * delta_n))
    w, v = np.linalg.eigh(H)
    psi0 = np.zeros(basis.dim, dtype=complex)
    psi0[0] = 1.0
    occ = basis.occupations.astype(float)

    def state(t):
        return (v * np.exp(-1j * w * t)) @ (v.conj().T @ psi0)

    trials = []
    for seed in range(count):
        t = 0.2 + 0.6 * seed / max(count - 1, 1)
        times = np.array([t - h, t, t + h])
        noise = NoiseSpec(delta_n, seed=seed)
        values = np.array([(np.abs(state(s)) ** 2) @ occ + noise.draw(M, k) for k, s in enumerate(times)])
        est = stencil_d2n(DensityTrace(times, values, N, noise), t, h)
        exact = exact_d2n(ManyBodyState(state(t), t), model, basis)
        trials.append(StencilTrial(seed, t, float(np.max(np.abs(est - exact))), bound))
    return trials, c4, h


@dataclass
class UnitaryTrial:
    family: int
    M: int
    observed: float
    bound: float


def unitary_trials(count=50, steps=400, t0=0.0, t1=1.0):
    """Propagators of two potential families on the same midpoint grid.

    Both propagators are products of exact exponentials with the potential
    sampled at step midpoints, so the bound evaluated on those samples is the
    exact statement being tested.
    """
    trials = []
    dt = (t1 - t0) / steps
    mids = t0 + (np.arange(steps) + 0.5) * dt
    for fam in range(count):
        rng = np.random.default_rng([7, fam])
        M = 2 + fam % 2
        T = chain_hopping(M, rng.uniform(0.5, 1.5), periodic=M > 2)
        a1, a2 = rng.uniform(-1, 1, (2, M))
        om1, om2 = rng.uniform(0.5, 4.0, 2)
        gap = rng.uniform(0.0, 0.1)
        V1 = a1[None, :] * np.sin(om1 * mids)[:, None]
        V2 = V1 + gap * a2[None, :] * np.sin(om2 * mids + rng.uniform(0, np.pi))[:, None]
        U1 = np.eye(M, dtype=complex)
        U2 = np.eye(M, dtype=complex)
        for k in range(steps):
            U1 = expm_hermitian(T + np.diag(V1[k]), dt) @ U1
            U2 = expm_hermitian(T + np.diag(V2[k]), dt) @ U2
        trials.append(UnitaryTrial(fam, M, float(np.linalg.norm(U1 - U2, 2)),
                                   unitary_error_bound(V1, V2, t0, t1)))
    return trials

