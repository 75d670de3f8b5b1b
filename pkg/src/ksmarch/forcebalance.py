"""Discrete force balance ``S = K V`` for a Kohn-Sham Slater determinant.

All expectations are taken from the one-body density matrix of the orbitals,
``rho[p, q] = <a+_p a_q>``, through ``G = 2 Re rho`` (the expectation of
``Gamma_pq``). ``K`` always annihilates the constant potential, so the solve
is carried out on the mean-zero subspace and the potential is reported in the
mean-zero gauge. ``kappa`` is the infinity norm of the inverse restricted to
that subspace, expressed back in site coordinates.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from .errors import InconsistentSource, VRepresentabilityBreakdown

SIGMA_FLOOR = 1e-10
KERNEL_TOL = 1e-8


def gamma_expectations(orbitals):
    """``G[p, q] = <Gamma_pq>`` for the Slater determinant (exactly symmetric)."""
    phi = np.asarray(orbitals)
    rho = phi.conj() @ phi.T
    return (rho + rho.conj().T).real


def build_K(phi, T):
    """Force-balance matrix ``K_jk = -T_kj G_jk + delta_jk sum_m T_mj G_jm``."""
    G = gamma_expectations(getattr(phi, "orbitals", phi))
    W = np.asarray(T).T * G
    return -W + np.diag(W.sum(axis=1))


def q_from_gamma(G, T):
    """``<Q_j> = ([T, G] T)_jj`` for any state with ``G[p, q] = <Gamma_pq>``."""
    G = np.asarray(G)
    T = np.asarray(T)
    return np.einsum("jk,kp,pj->j", T, G, T) - np.einsum("jp,pj->j", G, T @ T)


def q_expectations(phi, T):
    """``<Q_j>`` from the orbitals of a Slater determinant."""
    return q_from_gamma(gamma_expectations(getattr(phi, "orbitals", phi)), T)


def build_S(d2n_target, phi, model):
    """``S_j = d2n_j - <Q_j>_phi``."""
    T = getattr(model, "T", model)
    return np.asarray(d2n_target, dtype=float) - q_expectations(phi, T)


def master_equation_weights(phi, T):
    """Transition weights ``w_nm = -T_nm <Gamma_nm>`` whose generator is ``K``.

    ``K_nm = w_nm - delta_nm sum_k w_kn``. The weights can take either sign,
    which is what separates ``K`` from a genuine rate matrix.
    """
    G = gamma_expectations(getattr(phi, "orbitals", phi))
    return -np.asarray(T) * G


def generator_from_weights(w):
    return w - np.diag(w.sum(axis=0))


def local_energy_bound(model, V):
    """``E_L = max(d * max|T_ij|, |V|_inf)`` with ``d`` the row sparsity of ``T``."""
    T = np.asarray(getattr(model, "T", model))
    d = int(np.max(np.count_nonzero(T, axis=1)))
    kinetic = d * float(np.max(np.abs(T))) if T.size else 0.0
    V = np.asarray(V, dtype=float)
    return max(kinetic, float(np.max(np.abs(V))) if V.size else 0.0)


@functools.lru_cache(maxsize=32)
def _mean_zero_basis(M):
    X = np.eye(M)
    X[:, 0] = 1.0
    Q, _ = np.linalg.qr(X)
    B = Q[:, 1:]
    B.setflags(write=False)
    return B


def mean_zero_basis(M):
    """Orthonormal ``M x (M-1)`` basis of the vectors orthogonal to ``1``."""
    return _mean_zero_basis(int(M))


@dataclass(frozen=True)
class Diagnostics:
    kappa: float
    E_L: float
    R: float
    sigma_min: float
    sigma_max: float
    cond_2: float
    cond_inf: float
    residual: float
    kernel_component: float

    def as_row(self):
        return [self.kappa, self.E_L, self.R, self.sigma_min, self.residual,
                self.sigma_max, self.cond_2, self.cond_inf, self.kernel_component]

    ROW_HEADER = ("kappa", "E_L", "R", "sigma_min", "residual",
                  "sigma_max", "cond_2", "cond_inf", "kernel_component")


@dataclass(frozen=True)
class ForceBalanceSystem:
    K: np.ndarray
    S: np.ndarray
    V: np.ndarray
    diag: Diagnostics


def restricted_pinv(K, floor=SIGMA_FLOOR):
    """Inverse of ``K`` on the mean-zero subspace, plus its singular values.

    Raises VRepresentabilityBreakdown when the smallest singular value on the
    subspace falls below ``floor * sigma_max``.
    """
    K = np.asarray(K, dtype=float)
    M = K.shape[0]
    B = mean_zero_basis(M)
    Kr = B.T @ K @ B
    Kr = 0.5 * (Kr + Kr.T)
    w, U = np.linalg.eigh(Kr)
    sig = np.abs(w)
    smax = float(sig.max()) if sig.size else 0.0
    smin = float(sig.min()) if sig.size else 0.0
    if smax == 0.0 or smin < floor * smax:
        raise VRepresentabilityBreakdown(
            f"K is singular on the mean-zero subspace (sigma_min={smin:.3e}, sigma_max={smax:.3e})",
            sigma_min=smin, sigma_max=smax)
    Kplus = B @ ((U / w) @ U.T) @ B.T
    return Kplus, smin, smax


def solve_potential(K, S, floor=SIGMA_FLOOR, kernel_tol=KERNEL_TOL, T=None):
    """Mean-zero ``V`` with ``K V = P S`` and its diagnostics.

    ``P`` removes the mean of ``S``. If ``kernel_tol`` is not None, a mean
    component larger than ``kernel_tol * |S|_2`` raises InconsistentSource;
    with ``kernel_tol=None`` the source is always projected. ``T`` enables
    the local-energy diagnostics ``E_L`` and ``R``.
    """
    K = np.asarray(K, dtype=float)
    S = np.asarray(S, dtype=float)
    M = S.size
    Kplus, smin, smax = restricted_pinv(K, floor)
    kernel = float(S.sum() / np.sqrt(M))
    if kernel_tol is not None and abs(kernel) > kernel_tol * np.linalg.norm(S) + 1e-13:
        raise InconsistentSource(f"source has kernel component {kernel:.3e}", kernel_component=kernel)
    PS = S - S.mean()
    V = Kplus @ PS
    V = V - V.mean()
    kappa = float(np.max(np.sum(np.abs(Kplus), axis=1)))
    residual = float(np.max(np.abs(K @ V - PS)))
    E_L = local_energy_bound(T, V) if T is not None else float(np.max(np.abs(V)))
    knorm = float(np.max(np.sum(np.abs(K), axis=1)))
    diag = Diagnostics(kappa=kappa, E_L=E_L, R=kappa * E_L ** 2, sigma_min=smin, sigma_max=smax,
                       cond_2=smax / smin, cond_inf=knorm * kappa, residual=residual,
                       kernel_component=kernel)
    return V, diag


def force_balance(phi, d2n_target, model, floor=SIGMA_FLOOR, kernel_tol=KERNEL_TOL):
    """Build and solve the force-balance system for one Kohn-Sham state."""
    T = model.T
    K = build_K(phi, T)
    S = build_S(d2n_target, phi, T)
    V, diag = solve_potential(K, S, floor=floor, kernel_tol=kernel_tol, T=T)
    return ForceBalanceSystem(K, S, V, diag)


def current_expectations(phi, T):
    """``<dn_j/dt> = 2 sum_k T_kj Im rho_jk`` for the Slater determinant."""
    phi = np.asarray(getattr(phi, "orbitals", phi))
    rho = phi.conj() @ phi.T
    return 2.0 * np.sum(np.asarray(T).T * rho.imag, axis=1)
