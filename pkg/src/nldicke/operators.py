"""
Cavity and collective-spin operators on truncated Hilbert spaces.

Conventions
-----------
- Joint space ordering is **cavity ⊗ spin**: the joint basis state
  ``|n_c, n_s>`` has linear index ``n_c * (N + 1) + n_s``.
- The spin lives in the symmetric sector j = N/2. Basis states are indexed
  by the excitation number ``n = 0..N`` with ``Jz |n> = (n - N/2) |n>``, so
  ``n = 0`` is the all-down state.
- Vectorization is **row stacking**: ``vec(rho) = rho.reshape(-1)`` (numpy
  C order). With this choice ``vec(A @ rho @ B) = kron(A, B.T) @ vec(rho)``
  and ``tr(A @ rho) = vec(A.T) @ vec(rho)``. Every superoperator in the
  package is built through :func:`superop`, so this is the only place the
  convention is encoded.

All matrices are ``scipy.sparse.csr_matrix`` with complex entries, canonical
(sorted indices, no duplicates) and with exact zeros removed, so repeated
assembly gives identical storage.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

__all__ = [
    "HilbertDims", "build_cavity_ops", "build_spin_ops", "tensor", "superop",
    "identity", "vec", "unvec", "trace_vector", "canonical", "JointOperators",
]


@dataclass(frozen=True)
class HilbertDims:
    """Truncation of the joint cavity ⊗ spin space."""

    n_max: int
    N: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 0:
            raise ValueError(f"n_max must be a non-negative integer, got {self.n_max}")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError(f"N must be a positive integer, got {self.N}")

    @property
    def cavity(self) -> int:
        return self.n_max + 1

    @property
    def spin(self) -> int:
        return self.N + 1

    @property
    def joint(self) -> int:
        return self.cavity * self.spin

    def index(self, n_cavity: int, n_spin: int) -> int:
        if not 0 <= n_cavity <= self.n_max:
            raise IndexError(f"cavity level {n_cavity} outside 0..{self.n_max}")
        if not 0 <= n_spin <= self.N:
            raise IndexError(f"spin level {n_spin} outside 0..{self.N}")
        return n_cavity * self.spin + n_spin


def canonical(m) -> sp.csr_matrix:
    """Return ``m`` as a canonical complex CSR matrix without stored zeros."""
    out = sp.csr_matrix(m, dtype=complex, copy=True)
    out.sum_duplicates()
    out.eliminate_zeros()
    out.sort_indices()
    return out


def identity(d: int) -> sp.csr_matrix:
    return canonical(sp.identity(d, dtype=complex, format="csr"))


def build_cavity_ops(n_max: int):
    """
    Annihilation, creation and number operators for a Fock space cut at ``n_max``.

    Returns
    -------
    a, a_dag, n_op : csr_matrix
        ``(n_max+1) x (n_max+1)`` matrices with ``a|n> = sqrt(n)|n-1>``.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    d = n_max + 1
    a = sp.diags(np.sqrt(np.arange(1, d, dtype=float)), 1, shape=(d, d))
    a = canonical(a)
    a_dag = canonical(a.conj().T)
    n_op = canonical(sp.diags(np.arange(d, dtype=float), 0, shape=(d, d)))
    return a, a_dag, n_op


def build_spin_ops(N: int):
    """
    Collective spin operators in the symmetric j = N/2 sector.

    Returns
    -------
    Jz, Jp, Jm : csr_matrix
        ``(N+1) x (N+1)`` matrices in the excitation-number basis, with
        ``Jp|n> = sqrt((N-n)(n+1)) |n+1>`` and ``Jm = Jp^dagger``.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    n = np.arange(N + 1, dtype=float)
    Jz = canonical(sp.diags(n - N / 2, 0))
    # Jp raises n -> n+1, so its entries sit on the first sub-diagonal
    up = np.sqrt((N - n[:-1]) * (n[:-1] + 1))
    Jp = canonical(sp.diags(up, -1, shape=(N + 1, N + 1)))
    Jm = canonical(Jp.conj().T)
    return Jz, Jp, Jm


def tensor(A, B) -> sp.csr_matrix:
    """Kronecker product ``A ⊗ B`` (first factor is the slow index)."""
    return canonical(sp.kron(sp.csr_matrix(A), sp.csr_matrix(B), format="csr"))


def superop(left=None, right=None, dim: int | None = None) -> sp.csr_matrix:
    """
    Matrix ``M`` with ``M @ vec(rho) == vec(left @ rho @ right)``.

    Either side may be ``None`` for the identity, in which case ``dim`` is
    inferred from the other operand (or must be given when both are ``None``).
    """
    if left is None and right is None:
        if dim is None:
            raise ValueError("dim is required when both operands are identity")
        return identity(dim * dim)
    if left is not None:
        left = sp.csr_matrix(left)
        if left.shape[0] != left.shape[1]:
            raise ValueError(f"left operand must be square, got {left.shape}")
    if right is not None:
        right = sp.csr_matrix(right)
        if right.shape[0] != right.shape[1]:
            raise ValueError(f"right operand must be square, got {right.shape}")
    d = (left if left is not None else right).shape[0]
    if left is not None and right is not None and right.shape[0] != d:
        raise ValueError(f"dimension mismatch: {left.shape} vs {right.shape}")
    if dim is not None and dim != d:
        raise ValueError(f"dimension mismatch: operands are {d}, dim={dim}")
    eye = sp.identity(d, dtype=complex, format="csr")
    L = left if left is not None else eye
    R = right if right is not None else eye
    return tensor(L, R.T)


def vec(rho) -> np.ndarray:
    """Row-stacked vectorization of a square matrix."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {rho.shape}")
    return rho.reshape(-1).copy()


def unvec(v) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValueError(f"length {v.size} is not a perfect square")
    return v.reshape(d, d).copy()


def trace_vector(d: int) -> np.ndarray:
    """Row vector ``t`` with ``t @ vec(rho) == tr(rho)``."""
    return np.eye(d, dtype=complex).reshape(-1)


@dataclass(frozen=True)
class JointOperators:
    """Cavity and spin operators lifted to the joint cavity ⊗ spin space."""

    dims: HilbertDims
    a: sp.csr_matrix
    a_dag: sp.csr_matrix
    n_op: sp.csr_matrix
    Jz: sp.csr_matrix
    Jp: sp.csr_matrix
    Jm: sp.csr_matrix
    J2: sp.csr_matrix

    @classmethod
    def build(cls, dims: HilbertDims) -> "JointOperators":
        a, a_dag, n_op = build_cavity_ops(dims.n_max)
        Jz, Jp, Jm = build_spin_ops(dims.N)
        ic, is_ = identity(dims.cavity), identity(dims.spin)
        J2 = canonical(Jz @ Jz + 0.5 * (Jp @ Jm + Jm @ Jp))
        return cls(
            dims=dims,
            a=tensor(a, is_), a_dag=tensor(a_dag, is_), n_op=tensor(n_op, is_),
            Jz=tensor(ic, Jz), Jp=tensor(ic, Jp), Jm=tensor(ic, Jm),
            J2=tensor(ic, J2),
        )
