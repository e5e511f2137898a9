"""
Expectation values, reduced states, phase-space functions and state measures.

Phase-space conventions: the cavity Wigner function uses ``alpha = (x + i y)/sqrt(2)``
and is normalized as ``int W d^2 alpha = 1``, so ``W_vacuum(0) = 2/pi`` and the
integral over ``dx dy`` equals 2. The spin Q-function follows the excitation-number
basis of :mod:`nldicke.operators`: ``theta = 0`` is the all-down pole.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import trapezoid
from scipy.special import eval_genlaguerre, gammaln

from .model import DensityMatrix

__all__ = [
    "VacuumField", "WignerGrid", "SpinQGrid", "expect", "partial_trace",
    "photon_distribution", "g2_zero", "displacement_element", "wigner",
    "spin_coherent_coefficients", "spin_qfunction", "purity", "fidelity",
    "partial_transpose", "log_negativity",
]


class VacuumField(ZeroDivisionError):
    """``<a^dag a>`` too small for g2(0) to be defined."""


def _array(rho) -> np.ndarray:
    return rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho, dtype=complex)


def expect(op, rho) -> complex:
    """``tr(op @ rho)``; ``op`` may be sparse or dense."""
    r = _array(rho)
    if op.shape != r.shape:
        raise ValueError(f"operator shape {op.shape} does not match state {r.shape}")
    if sp.issparse(op):
        # tr(A B) = sum_ij A_ij B_ji
        return complex(sp.csr_matrix(op).multiply(r.T).sum())
    return complex(np.einsum("ij,ji->", np.asarray(op), r))


def partial_trace(rho: DensityMatrix, keep: str) -> np.ndarray:
    """Reduced density matrix of ``"cavity"`` or ``"spin"``."""
    dc, ds = rho.dims.cavity, rho.dims.spin
    t = rho.data.reshape(dc, ds, dc, ds)
    if keep == "cavity":
        return np.einsum("isjs->ij", t)
    if keep == "spin":
        return np.einsum("aiaj->ij", t)
    raise ValueError(f"keep must be 'cavity' or 'spin', got {keep!r}")


def photon_distribution(rho) -> np.ndarray:
    """Fock populations ``p_n``; accepts a joint state or a cavity matrix."""
    rc = partial_trace(rho, "cavity") if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return np.real(np.diag(rc))


def g2_zero(rho, floor: float = 1e-12) -> float:
    """
    Equal-time intensity correlation ``<a^dag a^dag a a> / <a^dag a>^2``.

    Raises
    ------
    VacuumField
        If ``<a^dag a> <= floor``.
    """
    p = photon_distribution(rho)
    n = np.arange(p.size)
    nbar = float(n @ p)
    if nbar <= floor:
        raise VacuumField(f"<a^dag a> = {nbar:.3e} is below {floor:.0e}")
    return float((n * (n - 1)) @ p) / nbar**2


# --- Wigner function --------------------------------------------------------

@dataclass
class WignerGrid:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # shape (len(y), len(x))

    def integral(self) -> float:
        """``int W d^2 alpha`` by the trapezoid rule (``d^2 alpha = dx dy / 2``)."""
        return 0.5 * float(trapezoid(trapezoid(self.values, self.x, axis=1), self.y))

    def local_maxima(self, rel_height: float = 1e-3):
        """
        Interior grid points strictly larger than their 8 neighbours.

        Points below ``rel_height * max(W)`` are ignored. Returns a list of
        ``(x, y, W)`` sorted by decreasing ``W``.
        """
        W = self.values
        c = W[1:-1, 1:-1]
        mask = c > rel_height * W.max()
        for di in (-1, 0, 1):
            for dj in (-1, 0, 1):
                if di or dj:
                    mask &= c > W[1 + di:W.shape[0] - 1 + di, 1 + dj:W.shape[1] - 1 + dj]
        iy, ix = np.nonzero(mask)
        peaks = [(self.x[j + 1], self.y[i + 1], c[i, j]) for i, j in zip(iy, ix)]
        return sorted(peaks, key=lambda p: -p[2])

    def rows(self):
        for i, yv in enumerate(self.y):
            for j, xv in enumerate(self.x):
                yield xv, yv, self.values[i, j]


def displacement_element(n: int, m: int, beta):
    """
    Fock matrix element ``<n|D(beta)|m>`` of the untruncated displacement.

    Uses the associated-Laguerre closed form, vectorized over ``beta``.
    """
    beta = np.asarray(beta, dtype=complex)
    x = np.abs(beta) ** 2
    if n >= m:
        k, lo, z = n - m, m, beta
    else:
        k, lo, z = m - n, n, -beta.conj()
    pref = np.exp(0.5 * (gammaln(lo + 1) - gammaln(lo + k + 1)) - 0.5 * x)
    return pref * z**k * eval_genlaguerre(lo, k, x)


def wigner(rho_cav, x, y) -> WignerGrid:
    """
    Cavity Wigner function on the grid ``alpha = (x + i y)/sqrt(2)``.

    Evaluates the displaced parity ``(2/pi) tr[rho D(2 alpha) (-1)^n]`` with
    exact matrix elements of the displacement, so truncation only enters
    through ``rho_cav`` itself.

    Parameters
    ----------
    rho_cav : array or DensityMatrix
        Reduced cavity state; a joint state is traced over the spin first.
    x, y : 1-D arrays
    """
    if isinstance(rho_cav, DensityMatrix):
        rho_cav = partial_trace(rho_cav, "cavity")
    rho_cav = np.asarray(rho_cav, dtype=complex)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    X, Y = np.meshgrid(x, y)
    beta = 2.0 * (X + 1j * Y) / np.sqrt(2.0)
    d = rho_cav.shape[0]
    W = np.zeros(X.shape)
    for m in range(d):
        sign = -1.0 if m % 2 else 1.0
        W += sign * np.real(rho_cav[m, m] * displacement_element(m, m, beta))
        for n in range(m + 1, d):
            # the (m, n) term is the complex conjugate of the (n, m) term
            if rho_cav[m, n] != 0:
                W += 2.0 * sign * np.real(rho_cav[m, n] * displacement_element(n, m, beta))
    return WignerGrid(x, y, (2.0 / np.pi) * W)


# --- spin Q-function --------------------------------------------------------

@dataclass
class SpinQGrid:
    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray  # shape (len(theta), len(phi))
    N: int

    def normalization(self) -> float:
        """
        ``(N+1)/(4 pi) int Q sin(theta) dtheta dphi``.

        Trapezoid in ``theta``; in ``phi`` the grid is treated as periodic when
        it does not include the endpoint ``2 pi``.
        """
        th = trapezoid(self.values * np.sin(self.theta)[:, None], self.theta, axis=0)
        if np.isclose(self.phi[-1] - self.phi[0], 2 * np.pi):
            ph = trapezoid(th, self.phi)
        else:
            ph = th.sum() * (2 * np.pi / self.phi.size)
        return (self.N + 1) / (4 * np.pi) * float(ph)

    def rows(self):
        for i, t in enumerate(self.theta):
            for j, p in enumerate(self.phi):
                yield t, p, self.values[i, j]


def spin_coherent_coefficients(N: int, theta, phi):
    """
    Amplitudes ``<n|eta>`` of the spin coherent state, ``eta = e^{i phi} tan(theta/2)``.

    Written as ``sqrt(C(N,n)) cos^{N-n}(theta/2) sin^n(theta/2) e^{i n phi}``, which
    is the normalized form and stays finite at ``theta = pi``. Returns an array
    of shape ``theta.shape + (N+1,)``.
    """
    theta = np.asarray(theta, dtype=float)[..., None]
    phi = np.asarray(phi, dtype=float)[..., None]
    n = np.arange(N + 1)
    logc = 0.5 * (gammaln(N + 1) - gammaln(n + 1) - gammaln(N - n + 1))
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    # 0**0 = 1 in numpy, which gives the correct pole limits
    return np.exp(logc) * c ** (N - n) * s**n * np.exp(1j * n * phi)


def spin_qfunction(rho_spin, theta, phi, flip_poles: bool = False) -> SpinQGrid:
    """
    Husimi function ``Q(theta, phi) = <eta|rho_spin|eta>``.

    With ``flip_poles`` the sphere is rotated by pi about the x axis, putting
    the all-up state at ``theta = 0``.
    """
    if isinstance(rho_spin, DensityMatrix):
        rho_spin = partial_trace(rho_spin, "spin")
    rho_spin = np.asarray(rho_spin, dtype=complex)
    N = rho_spin.shape[0] - 1
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    T, P = np.meshgrid(theta, phi, indexing="ij")
    if flip_poles:
        T, P = np.pi - T, -P
    c = spin_coherent_coefficients(N, T, P)
    Q = np.real(np.einsum("...i,ij,...j->...", c.conj(), rho_spin, c))
    return SpinQGrid(theta, phi, Q, N)


# --- state measures ---------------------------------------------------------

def purity(rho) -> float:
    r = _array(rho)
    return float(np.real(np.einsum("ij,ji->", r, r)))


def _psd_sqrt(r):
    w, v = np.linalg.eigh(0.5 * (r + r.conj().T))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def fidelity(rho, sigma, pure_tol: float = 1e-10) -> float:
    """
    Uhlmann fidelity ``tr sqrt(sqrt(rho) sigma sqrt(rho))`` (not squared).

    When either argument is pure to ``pure_tol`` this reduces to
    ``sqrt(<psi|other|psi>)``.
    """
    a, b = _array(rho), _array(sigma)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    for pure, other in ((b, a), (a, b)):
        if purity(pure) > 1 - pure_tol:
            w, v = np.linalg.eigh(0.5 * (pure + pure.conj().T))
            psi = v[:, -1]
            return float(np.sqrt(max(np.real(psi.conj() @ other @ psi), 0.0)))
    s = _psd_sqrt(a)
    m = s @ b @ s
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    return float(np.sum(np.sqrt(np.clip(w, 0, None))))


def partial_transpose(rho: DensityMatrix, side: str = "cavity") -> np.ndarray:
    dc, ds = rho.dims.cavity, rho.dims.spin
    t = rho.data.reshape(dc, ds, dc, ds)
    if side == "cavity":
        t = t.transpose(2, 1, 0, 3)
    elif side == "spin":
        t = t.transpose(0, 3, 2, 1)
    else:
        raise ValueError(f"side must be 'cavity' or 'spin', got {side!r}")
    return t.reshape(dc * ds, dc * ds)


def log_negativity(rho: DensityMatrix, side: str = "cavity") -> float:
    """``log2 ||rho^T_side||_1``; the partial transpose is Hermitian, so the norm is sum |eig|."""
    pt = partial_transpose(rho, side)
    w = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    return float(np.log2(np.sum(np.abs(w))))
