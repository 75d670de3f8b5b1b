"""Shared oracles and fixtures.

The dense Fock-space oracle builds creation/annihilation operators on the full
``2**M`` space from Kronecker products of 2x2 matrices (Jordan-Wigner
strings), independent of the bit-pattern code used by the package, and
projects them onto a fixed-N basis.
"""

import functools

import numpy as np
import pytest

from ksmarch.fock import build_basis

ACCEPTANCE = {}

_SIGMA = np.array([[0.0, 1.0], [0.0, 0.0]])  # |empty><occupied|
_Z = np.diag([1.0, -1.0])
_I = np.eye(2)


@functools.lru_cache(maxsize=None)
def dense_annihilators(M):
    """``a_j`` on the ``2**M`` space; site 0 is the lowest bit of the index."""
    ops = []
    for j in range(M):
        factors = [_I] * (M - 1 - j) + [_SIGMA] + [_Z] * j  # most significant site first
        A = np.array([[1.0]])
        for f in factors:
            A = np.kron(A, f)
        ops.append(A)
    return tuple(ops)


def project(A, basis):
    idx = basis.states
    return A[np.ix_(idx, idx)]


def dense_one_body(coeffs, basis):
    """``sum_pq C_pq a+_p a_q`` projected onto ``basis``."""
    a = dense_annihilators(basis.M)
    full = sum(coeffs[p, q] * a[p].T @ a[q] for p in range(basis.M) for q in range(basis.M)
               if coeffs[p, q] != 0)
    if isinstance(full, int):
        return np.zeros((basis.dim, basis.dim))
    return project(full, basis)


def dense_hamiltonian(T, V, pairs, basis, four_index=None):
    a = dense_annihilators(basis.M)
    M = basis.M
    n = [a[j].T @ a[j] for j in range(M)]
    H = sum((T[p, q] + (V[p] if p == q else 0.0)) * a[p].T @ a[q]
            for p in range(M) for q in range(M)) + 0j
    for i, j, w in pairs:
        H = H + w * n[i] @ n[j]
    for (i, j, k, l), w in (four_index or {}).items():
        H = H + w * a[i].T @ a[j].T @ a[k] @ a[l]
    return project(H, basis)


def random_orbitals(M, N, rng):
    A = rng.standard_normal((M, N)) + 1j * rng.standard_normal((M, N))
    q, _ = np.linalg.qr(A)
    return q[:, :N]


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def dimer_basis():
    return build_basis(2, 1)


@pytest.fixture
def record_acceptance():
    def record(number, passed, detail):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
