"""Exact dense propagation of the interacting state and the Kohn-Sham orbitals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DeskScaleError, PropagationFault
from .fock import DIMENSION_CAP, build_interaction, one_body_operator

NORM_TOL = 1e-10
GRAM_TOL = 1e-9


@dataclass(frozen=True)
class ManyBodyState:
    amplitudes: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "amplitudes", np.asarray(self.amplitudes, dtype=complex))
        object.__setattr__(self, "t", float(self.t))

    @property
    def norm(self):
        return float(np.linalg.norm(self.amplitudes))


@dataclass(frozen=True)
class KSState:
    """Kohn-Sham orbitals stored as the columns of an ``M x N`` matrix."""

    orbitals: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        phi = np.asarray(self.orbitals, dtype=complex)
        if phi.ndim == 1:
            phi = phi[:, None]
        object.__setattr__(self, "orbitals", phi)
        object.__setattr__(self, "t", float(self.t))

    @property
    def M(self):
        return self.orbitals.shape[0]

    @property
    def N(self):
        return self.orbitals.shape[1]

    @property
    def density(self):
        return np.sum(np.abs(self.orbitals) ** 2, axis=1)

    def gram_deviation(self):
        phi = self.orbitals
        return float(np.max(np.abs(phi.conj().T @ phi - np.eye(self.N))))


def orthonormalize(phi):
    """Closest matrix with orthonormal columns (polar factor via SVD)."""
    u, _, vh = np.linalg.svd(phi, full_matrices=False)
    return u @ vh


def expm_hermitian(H, dt):
    """``exp(-i H dt)`` for a dense Hermitian ``H``."""
    w, v = np.linalg.eigh(H)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


class _Hamiltonian:
    """Dense ``H(t) = H_static + diag(occ @ V(t))`` for repeated evaluation."""

    def __init__(self, model, basis):
        if basis.dim > DIMENSION_CAP:
            raise DeskScaleError(f"dimension {basis.dim} above propagation cap {DIMENSION_CAP}")
        static = one_body_operator(basis, model.T).matrix
        if model.interacting:
            static = static + build_interaction(model, basis).matrix
        self.static = static.toarray()
        self.occ = basis.occupations.astype(float)
        self.model = model

    def __call__(self, t):
        H = self.static.copy()
        H[np.diag_indices_from(H)] += self.occ @ self.model.V(t)
        return H


def _step_many_body(psi, ham, t0, t1, steps):
    """Midpoint-rule exponential integrator from ``t0`` to ``t1`` (either direction)."""
    dt = (t1 - t0) / steps
    for s in range(steps):
        tm = t0 + (s + 0.5) * dt
        psi = expm_hermitian(ham(tm), dt) @ psi
    if not np.all(np.isfinite(psi)):
        raise PropagationFault("non-finite amplitudes during propagation")
    return psi


def evolve_interacting(state, model, t0, t1, steps, basis=None, ham=None):
    """Advance ``state`` from ``t0`` to ``t1`` in ``steps`` exact exponentials.

    Within each substep the Hamiltonian is evaluated at the substep midpoint,
    which gives second-order convergence in the substep for smooth ``V(t)``.
    """
    if not t1 > t0:
        raise ValueError("need t1 > t0")
    if steps < 1:
        raise ValueError("steps must be positive")
    if ham is None:
        if basis is None:
            from .fock import build_basis
            basis = build_basis(model.M, model.N)
        ham = _Hamiltonian(model, basis)
    psi = np.asarray(state.amplitudes, dtype=complex)
    if abs(np.linalg.norm(psi) - 1.0) > NORM_TOL:
        raise ValueError("state is not normalized")
    psi = _step_many_body(psi, ham, t0, t1, steps)
    return ManyBodyState(psi, t1)


def evolve_ks(state, T, V, dt):
    """Advance every orbital by ``exp(-i (T + diag V) dt)``."""
    V = np.asarray(V, dtype=float)
    if not np.all(np.isfinite(V)):
        raise PropagationFault("non-finite Kohn-Sham potential")
    U = expm_hermitian(np.asarray(T) + np.diag(V), dt)
    phi = U @ state.orbitals
    if not np.all(np.isfinite(phi)):
        raise PropagationFault("non-finite orbitals after propagation")
    out = KSState(phi, state.t + dt)
    if out.gram_deviation() > GRAM_TOL:
        out = KSState(orthonormalize(phi), out.t)
    return out


def ground_orbitals(T, V, N):
    """Lowest ``N`` eigenvectors of ``T + diag(V)``, the non-interacting ground state."""
    _, vecs = np.linalg.eigh(np.asarray(T) + np.diag(np.asarray(V, dtype=float)))
    return vecs[:, :N].astype(complex)
