"""
Generalized Dicke Hamiltonian and the Liouvillian of its master equation.

    H = w0 Jz + w a^dag a + g/sqrt(N) (Jm + Jp)(a + a^dag) + U/N Jz a^dag a
    d rho/dt = -i[H, rho] + 2 kappa (a rho a^dag - {a^dag a, rho}/2)

Frequencies are angular, in rad/us; times are in us. Users normally quote the
cyclic values nu = w/(2 pi) in MHz, see :meth:`ModelParams.from_mhz`.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from .operators import HilbertDims, JointOperators, canonical, superop

__all__ = [
    "TWO_PI", "ModelParams", "DensityMatrix", "InvalidState",
    "build_hamiltonian", "build_liouvillian", "basis_state", "joint_operators",
    "diagonal_energy", "diagonal_crossing",
]

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class ModelParams:
    """
    Model frequencies (rad/us) together with the truncation.

    Parameters
    ----------
    omega0, omega : float
        Atomic and cavity frequencies.
    kappa : float
        Cavity field decay rate (photon number decays as exp(-2 kappa t)).
    g : float
        Linear atom-photon coupling.
    U : float
        Non-linear coupling between photon number and inversion.
    N : int
        Number of atoms.
    n_max : int
        Highest retained Fock level.
    """

    omega0: float
    omega: float
    kappa: float
    g: float
    U: float
    N: int
    n_max: int = 9

    def __post_init__(self):
        if self.omega0 < 0:
            raise ValueError("omega0 must be >= 0")
        if self.omega <= 0:
            raise ValueError("omega must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.g < 0:
            raise ValueError("g must be >= 0")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError("n_max must be an integer >= 1")
        for name in ("omega0", "omega", "kappa", "g", "U"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    @classmethod
    def from_mhz(cls, omega0, omega, kappa, g, U, N, n_max=9):
        """Build from cyclic frequencies nu = w/(2 pi) given in MHz."""
        return cls(TWO_PI * omega0, TWO_PI * omega, TWO_PI * kappa,
                   TWO_PI * g, TWO_PI * U, int(N), int(n_max))

    def mhz(self) -> dict:
        """Cyclic frequencies in MHz (the inverse of :meth:`from_mhz`)."""
        return {k: getattr(self, k) / TWO_PI
                for k in ("omega0", "omega", "kappa", "g", "U")}

    def as_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("omega0", "omega", "kappa", "g", "U")}
        out.update(N=self.N, n_max=self.n_max)
        return out

    def replace(self, **changes) -> "ModelParams":
        return replace(self, **changes)

    @property
    def dims(self) -> HilbertDims:
        return HilbertDims(self.n_max, self.N)


class InvalidState(ValueError):
    """A matrix failed the density-matrix checks."""


@dataclass
class DensityMatrix:
    """
    Dense density matrix on the joint cavity ⊗ spin space.

    ``info`` carries solver diagnostics (residual, iterations, warnings) when
    the state comes out of a solver; it is empty otherwise.
    """

    data: np.ndarray
    dims: HilbertDims
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        D = self.dims.joint
        if self.data.shape != (D, D):
            raise ValueError(f"expected shape {(D, D)}, got {self.data.shape}")

    @classmethod
    def from_vector(cls, v, dims: HilbertDims, info=None):
        D = dims.joint
        return cls(np.asarray(v, dtype=complex).reshape(D, D), dims, dict(info or {}))

    @classmethod
    def pure(cls, psi, dims: HilbertDims):
        psi = np.asarray(psi, dtype=complex).ravel()
        psi = psi / np.linalg.norm(psi)
        return cls(np.outer(psi, psi.conj()), dims)

    @property
    def vector(self) -> np.ndarray:
        return self.data.reshape(-1)

    def trace_error(self) -> float:
        return float(abs(np.trace(self.data) - 1.0))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.data + self.data.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def validate(self, herm_tol=1e-10, trace_tol=1e-10, pos_tol=1e-8) -> "DensityMatrix":
        """Raise :class:`InvalidState` unless Hermitian, unit-trace and positive."""
        if (e := self.hermiticity_error()) > herm_tol:
            raise InvalidState(f"not Hermitian: max deviation {e:.3e}")
        if (e := self.trace_error()) > trace_tol:
            raise InvalidState(f"trace deviates from 1 by {e:.3e}")
        if (e := self.min_eigenvalue()) < -pos_tol:
            raise InvalidState(f"negative eigenvalue {e:.3e}")
        return self


@lru_cache(maxsize=64)
def joint_operators(dims: HilbertDims) -> JointOperators:
    return JointOperators.build(dims)


def build_hamiltonian(params: ModelParams) -> sp.csr_matrix:
    """Sparse Hamiltonian on the joint space; Hermitian by construction."""
    ops = joint_operators(params.dims)
    N = params.N
    H = (params.omega0 * ops.Jz
         + params.omega * ops.n_op
         + (params.g / np.sqrt(N)) * ((ops.Jm + ops.Jp) @ (ops.a + ops.a_dag))
         + (params.U / N) * (ops.Jz @ ops.n_op))
    H = canonical(H)
    # products of real operators are real; drop rounding residue in the
    # imaginary part and enforce exact Hermiticity of the stored entries
    H = canonical(0.5 * (H + H.conj().T))
    return H


@lru_cache(maxsize=32)
def build_liouvillian(params: ModelParams) -> sp.csr_matrix:
    """
    Vectorized generator ``L`` with ``L @ vec(rho) = vec(d rho/dt)``.

    The result is cached per parameter point and must be treated as read-only.
    """
    ops = joint_operators(params.dims)
    H = build_hamiltonian(params)
    D = params.dims.joint
    L = -1j * (superop(H, None, D) - superop(None, H, D))
    if params.kappa != 0:
        ada = ops.a_dag @ ops.a
        L = L + 2.0 * params.kappa * (
            superop(ops.a, ops.a_dag)
            - 0.5 * superop(ada, None) - 0.5 * superop(None, ada))
    L = canonical(L)
    L.data.setflags(write=False)
    return L


def basis_state(dims: HilbertDims, n_cavity: int, n_spin: int) -> DensityMatrix:
    """Projector onto ``|n_cavity> ⊗ |n_spin>`` (``n_spin = 0`` is Jz = -N/2)."""
    k = dims.index(n_cavity, n_spin)
    rho = np.zeros((dims.joint, dims.joint), dtype=complex)
    rho[k, k] = 1.0
    return DensityMatrix(rho, dims)


def diagonal_energy(params: ModelParams, n_cavity: int, n_spin: int) -> float:
    """Diagonal matrix element of H for a joint basis state."""
    jz = n_spin - params.N / 2
    return (params.omega0 * jz + params.omega * n_cavity
            + params.U / params.N * jz * n_cavity)


def diagonal_crossing(params: ModelParams, state_a, state_b) -> float | None:
    """
    Value of U at which the diagonal energies of two basis states coincide.

    The diagonal of H is affine in U, so the crossing is found exactly by
    evaluating it at two values of U. Returns ``None`` when the two lines are
    parallel.
    """
    def gap(U):
        p = params.replace(U=U)
        return diagonal_energy(p, *state_a) - diagonal_energy(p, *state_b)

    g0, g1 = gap(0.0), gap(1.0)
    slope = g1 - g0
    if slope == 0:
        return None
    return -g0 / slope
