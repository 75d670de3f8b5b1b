"""Fixed-particle-number Fock space for spinless lattice fermions.

Conventions
-----------
Sites are indexed ``0..M-1``. A basis state is an integer bit pattern whose
bit ``j`` is the occupation of site ``j`` (site 0 is the low bit), and the
basis is ordered by ascending integer value. Fermionic signs follow the
Jordan-Wigner ordering by ascending site index::

    a_j |n> = (-1)**(n_0 + ... + n_{j-1}) |n - e_j>

With this choice the single-particle sector (N=1) coincides with the site
basis, so the N=1 Hamiltonian matrix is ``T + diag(V)`` itself.

Two-body terms are stored either as density-density pairs
``W n_i n_j`` or as general entries ``W_ijkl a+_i a+_j a_k a_l`` applied
right to left (``a_l`` first).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConstructionFault, DeskScaleError
from .waveforms import PotentialSchedule

DIMENSION_CAP = 1000
HERMITIAN_RTOL = 1e-12


@dataclass(frozen=True)
class FockBasis:
    """The ``binomial(M, N)`` occupation patterns with ``N`` bits set."""

    M: int
    N: int
    states: np.ndarray
    _lookup: dict = field(repr=False, compare=False, default_factory=dict)

    @property
    def dim(self):
        return self.states.size

    def index(self, pattern):
        return self._lookup[int(pattern)]

    @property
    def occupations(self):
        """``(dim, M)`` array of 0/1 site occupations."""
        return ((self.states[:, None] >> np.arange(self.M)) & 1).astype(np.int8)


def build_basis(M, N, cap=DIMENSION_CAP):
    """Enumerate the ``N``-electron basis on ``M`` sites in ascending order."""
    if not (1 <= N <= M):
        raise ValueError(f"need 1 <= N <= M, got M={M}, N={N}")
    if M > 12:
        raise DeskScaleError(f"M={M} exceeds the desk-scale limit of 12 sites")
    dim = math.comb(M, N)
    if cap is not None and dim > cap:
        raise DeskScaleError(f"dimension binomial({M},{N})={dim} exceeds cap {cap}")
    patterns = sorted(sum(1 << s for s in occ) for occ in itertools.combinations(range(M), N))
    states = np.array(patterns, dtype=np.int64)
    return FockBasis(M, N, states, {int(s): i for i, s in enumerate(patterns)})


@dataclass(frozen=True)
class LatticeModel:
    """Lattice Hamiltonian ``T + V(t) + W`` for ``N`` spinless fermions.

    ``pairs`` holds density-density terms ``(i, j, W_ij)`` contributing
    ``W_ij n_i n_j``; ``four_index`` maps ``(i, j, k, l)`` to the coefficient
    of ``a+_i a+_j a_k a_l``.
    """

    T: np.ndarray
    N: int
    potential: PotentialSchedule | None = None
    pairs: tuple = ()
    four_index: dict = field(default_factory=dict)

    def __post_init__(self):
        T = np.array(self.T, dtype=float)
        if T.ndim != 2 or T.shape[0] != T.shape[1]:
            raise ValueError("T must be a square matrix")
        if not np.allclose(T, T.T, rtol=0, atol=1e-14):
            raise ValueError("T must be symmetric (no magnetic field)")
        T.setflags(write=False)
        object.__setattr__(self, "T", T)
        M = T.shape[0]
        if not 1 <= self.N <= M:
            raise ValueError(f"need 1 <= N <= M, got N={self.N}, M={M}")
        pot = self.potential
        if pot is None:
            pot = PotentialSchedule("constant", np.zeros(M))
        if pot.M != M:
            raise ValueError("potential length does not match T")
        object.__setattr__(self, "potential", pot)
        pairs = tuple((int(i), int(j), float(w)) for i, j, w in self.pairs)
        for i, j, _ in pairs:
            if not (0 <= i < M and 0 <= j < M):
                raise ValueError(f"interaction pair ({i},{j}) out of range")
        object.__setattr__(self, "pairs", pairs)
        four = {tuple(int(x) for x in k): complex(v) for k, v in dict(self.four_index).items()}
        for k in four:
            if len(k) != 4 or not all(0 <= x < M for x in k):
                raise ValueError(f"bad four-index key {k}")
        object.__setattr__(self, "four_index", four)

    @property
    def M(self):
        return self.T.shape[0]

    @property
    def d(self):
        """Maximum number of nonzeros in a row of ``T``."""
        return int(np.max(np.count_nonzero(self.T, axis=1)))

    def V(self, t):
        return self.potential(t)

    @property
    def interacting(self):
        return bool(self.pairs) or bool(self.four_index)

    def with_potential(self, potential):
        return LatticeModel(self.T, self.N, potential, self.pairs, self.four_index)

    def noninteracting(self):
        return LatticeModel(self.T, self.N, self.potential)


@dataclass(frozen=True)
class SparseOperator:
    """Sparse matrix in a Fock basis, optionally checked for Hermiticity."""

    matrix: sp.csr_matrix
    hermitian: bool = True

    def __post_init__(self):
        m = sp.csr_matrix(self.matrix, dtype=complex)
        m.sum_duplicates()
        m.eliminate_zeros()
        object.__setattr__(self, "matrix", m)
        if self.hermitian:
            err = hermitian_defect(m)
            scale = max(1.0, abs(m).max() if m.nnz else 0.0)
            if err > HERMITIAN_RTOL * scale:
                raise ConstructionFault(f"operator flagged Hermitian has defect {err:.3e}")

    @property
    def dim(self):
        return self.matrix.shape[0]

    def triplets(self):
        coo = self.matrix.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def toarray(self):
        return self.matrix.toarray()

    def __matmul__(self, other):
        return self.matrix @ other

    def expect(self, psi):
        psi = np.asarray(psi)
        val = np.vdot(psi, self.matrix @ psi)
        return val.real if self.hermitian else val


def hermitian_defect(m):
    diff = m - m.conj().T
    return float(abs(diff).max()) if diff.nnz else 0.0


def _apply_string(states, ops):
    """Apply a product of ladder operators to every basis pattern at once.

    ``ops`` is a list of ``(site, dagger)`` in written order; the rightmost
    acts first. Returns the new patterns, signs and a validity mask.
    """
    s = states.copy()
    sign = np.ones(s.size)
    valid = np.ones(s.size, dtype=bool)
    for site, dagger in reversed(ops):
        bit = (s >> site) & 1
        valid &= (bit == 0) if dagger else (bit == 1)
        below = np.bitwise_count(s & ((1 << site) - 1))
        sign *= 1.0 - 2.0 * (below & 1)
        s = s ^ (1 << site)
    return s, sign, valid


def _assemble(basis, terms):
    """Sum ``coeff * string`` over ``terms`` into a sparse matrix."""
    lookup = basis._lookup
    rows, cols, vals = [], [], []
    col_all = np.arange(basis.dim)
    for coeff, ops in terms:
        if coeff == 0:
            continue
        s, sign, valid = _apply_string(basis.states, ops)
        if not valid.any():
            continue
        rows.extend(lookup[int(x)] for x in s[valid])
        cols.append(col_all[valid])
        vals.append(coeff * sign[valid])
    if not vals:
        return sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    return sp.csr_matrix(
        (np.concatenate(vals), (np.array(rows), np.concatenate(cols))),
        shape=(basis.dim, basis.dim), dtype=complex,
    )


def one_body_operator(basis, A, hermitian=True):
    """``sum_pq A[p, q] a+_p a_q`` as a :class:`SparseOperator`."""
    A = np.asarray(A)
    if A.shape != (basis.M, basis.M):
        raise ValueError("coefficient matrix does not match basis")
    p_idx, q_idx = np.nonzero(A)
    terms = [(A[p, q], [(p, True), (q, False)]) for p, q in zip(p_idx.tolist(), q_idx.tolist())]
    return SparseOperator(_assemble(basis, terms), hermitian=hermitian)


def build_interaction(model, basis):
    """Two-body operator ``W`` (density-density pairs plus general terms)."""
    occ = basis.occupations.astype(float)
    diag = np.zeros(basis.dim)
    for i, j, w in model.pairs:
        diag += w * occ[:, i] * occ[:, j]
    mat = sp.diags(diag).astype(complex)
    if model.four_index:
        terms = [(w, [(i, True), (j, True), (k, False), (l, False)])
                 for (i, j, k, l), w in model.four_index.items()]
        mat = mat + _assemble(basis, terms)
    return SparseOperator(mat)


def _check_model(model, basis):
    if model.M != basis.M or model.N != basis.N:
        raise ValueError(f"model (M={model.M}, N={model.N}) does not match basis (M={basis.M}, N={basis.N})")


def build_hamiltonian(model, basis, t=0.0):
    """Matrix of ``H(t) = T + V(t) + W`` in ``basis``."""
    _check_model(model, basis)
    h1 = model.T + np.diag(model.V(t))
    H = one_body_operator(basis, h1).matrix
    if model.interacting:
        H = H + build_interaction(model, basis).matrix
    return SparseOperator(H)


def build_density_ops(basis):
    """Site occupation operators ``n_j`` (diagonal)."""
    occ = basis.occupations.astype(complex)
    return [SparseOperator(sp.diags(occ[:, j])) for j in range(basis.M)]


def gamma_coefficients(M, i, j):
    A = np.zeros((M, M))
    A[i, j] += 1.0
    A[j, i] += 1.0
    return A


def build_gamma_ops(basis):
    """``Gamma_ij = a+_i a_j + a+_j a_i`` for all pairs; ``ops[i][j] is ops[j][i]``."""
    M = basis.M
    ops = [[None] * M for _ in range(M)]
    for i in range(M):
        for j in range(i, M):
            ops[i][j] = ops[j][i] = one_body_operator(basis, gamma_coefficients(M, i, j))
    return ops


def dtn_coefficients(T, j):
    """One-body coefficients of ``-i sum_k T_kj (a+_j a_k - a+_k a_j)``."""
    M = T.shape[0]
    A = np.zeros((M, M), dtype=complex)
    for k in range(M):
        if k == j or T[k, j] == 0:
            continue
        A[j, k] += -1j * T[k, j]
        A[k, j] += 1j * T[k, j]
    return A


def build_dtn_ops(model, basis):
    """Density time-derivative operators (the lattice continuity equation)."""
    _check_model(model, basis)
    return [one_body_operator(basis, dtn_coefficients(model.T, j)) for j in range(basis.M)]


def q_coefficients(T, j):
    """One-body coefficients of ``Q_j = ([T, Gamma] T)_jj``.

    Expanding ``Gamma_kp = a+_k a_p + a+_p a_k`` gives ``2 t t^T`` from the
    ``T Gamma T`` part (``t`` is column ``j`` of ``T``) minus ``(T^2)_pj`` on
    row and column ``j`` from the ``Gamma T^2`` part.
    """
    t = T[:, j]
    u = (T @ T)[:, j]
    A = 2.0 * np.outer(t, t)
    A[j, :] -= u
    A[:, j] -= u
    return A


def build_Q_ops(model, basis, verify=False, atol=1e-10):
    """Momentum-stress operators ``Q_j`` via the one-body contraction.

    With ``verify=True`` each operator is compared with the Fock-space
    commutator ``i[T, dn_j/dt]`` and a mismatch raises ConstructionFault.
    """
    _check_model(model, basis)
    ops = [one_body_operator(basis, q_coefficients(model.T, j)) for j in range(basis.M)]
    if verify:
        for j, (fast, slow) in enumerate(zip(ops, q_ops_commutator(model, basis))):
            diff = fast.matrix - slow.matrix
            err = abs(diff).max() if diff.nnz else 0.0
            if err > atol:
                raise ConstructionFault(f"Q_{j}: contraction and commutator differ by {err:.3e}")
    return ops


def q_ops_commutator(model, basis):
    """``i[T, dn_j/dt]`` assembled directly in Fock space (reference path)."""
    Tm = one_body_operator(basis, model.T).matrix
    out = []
    for op in build_dtn_ops(model, basis):
        D = op.matrix
        out.append(SparseOperator(1j * (Tm @ D - D @ Tm)))
    return out


def slater_amplitudes(orbitals, basis):
    """Fock-space amplitudes of the Slater determinant with given orbitals.

    The amplitude of the pattern occupying sites ``s_1 < ... < s_N`` is the
    determinant of the corresponding rows of the ``M x N`` orbital matrix.
    """
    phi = np.asarray(orbitals, dtype=complex)
    if phi.shape != (basis.M, basis.N):
        raise ValueError(f"orbitals must have shape ({basis.M}, {basis.N})")
    occ = basis.occupations.astype(bool)
    return np.array([np.linalg.det(phi[row]) for row in occ])


def one_body_density_matrix(orbitals):
    """``rho[p, q] = <a+_p a_q>`` for the Slater determinant of ``orbitals``."""
    phi = np.asarray(orbitals)
    return phi.conj() @ phi.T


def random_state(basis, rng, real=False):
    psi = rng.standard_normal(basis.dim)
    if not real:
        psi = psi + 1j * rng.standard_normal(basis.dim)
    return psi / np.linalg.norm(psi)


def chain_hopping(M, tau=1.0, periodic=False):
    """Nearest-neighbour hopping matrix with ``T_ij = -tau``."""
    T = np.zeros((M, M))
    for j in range(M - 1):
        T[j, j + 1] = T[j + 1, j] = -tau
    if periodic and M > 2:
        T[0, M - 1] = T[M - 1, 0] = -tau
    return T
