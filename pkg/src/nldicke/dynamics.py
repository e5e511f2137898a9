"""
Time evolution, two-time field correlations and cavity power spectra.

The correlation ``C(t) = <a^dag(t) a(0)> - |<a>|^2`` follows the quantum
regression recipe: the operator ``a rho_ss`` is propagated with the same
Liouvillian as a state and then traced against ``a^dag``.

Spectra use the kernel ``exp(-i nu t)`` on the one-sided series,

    S(nu) = 2 Re sum_k w_k C(t_k) exp(-i nu t_k) dt,   w_0 = 1/2, w_k = 1,

which equals the two-sided transform for stationary ``C(-t) = C(t)^*``.
With this kernel a field rotating as ``a ~ exp(-i w t)`` (so
``C ~ exp(+i w t)``) shows up at ``nu = +w``. The half weight at ``t = 0``
makes ``(1/2 pi) sum S d nu = C(0)`` hold exactly on the FFT grid.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .model import DensityMatrix, joint_operators

__all__ = [
    "StepSizeUnderflow", "UndecayedCorrelation", "TimeSeries", "Spectrum",
    "uniform_grid", "evolve", "propagate", "correlation",
    "correlation_until_decay", "power_spectrum",
]

log = logging.getLogger(__name__)


class StepSizeUnderflow(RuntimeError):
    """The adaptive integrator could not reach the requested time."""


class UndecayedCorrelation(ValueError):
    """The correlation window is too short for a meaningful spectrum."""


@dataclass
class TimeSeries:
    t: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.t.shape != self.values.shape or self.t.ndim != 1:
            raise ValueError("t and values must be 1-D arrays of equal length")
        if self.t.size < 2:
            raise ValueError("a time series needs at least two samples")
        steps = np.diff(self.t)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
            raise ValueError("time grid must be uniform and ascending")

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    def rows(self):
        for t, c in zip(self.t, self.values):
            yield t, c.real, c.imag


@dataclass
class Spectrum:
    nu: np.ndarray  # angular frequency, rad/us
    values: np.ndarray

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.nu.shape != self.values.shape:
            raise ValueError("nu and values must have equal length")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("spectrum contains non-finite values")

    @property
    def dnu(self) -> float:
        return float(self.nu[1] - self.nu[0])

    def integral(self) -> float:
        """``(1/2 pi) sum S d nu``; equals ``C(0)`` for spectra from :func:`power_spectrum`."""
        return float(self.values.sum() * self.dnu / (2 * np.pi))

    def rows(self):
        yield from zip(self.nu, self.values)


def uniform_grid(t_end: float, dt: float) -> np.ndarray:
    """``0, dt, 2 dt, ...`` up to ``t_end`` (rounded to a whole number of steps)."""
    if dt <= 0 or t_end < 0:
        raise ValueError("need dt > 0 and t_end >= 0")
    n = int(round(t_end / dt))
    return dt * np.arange(n + 1)


def _check_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if t[0] != 0:
        raise ValueError("t_grid must start at 0")
    if np.any(np.diff(t) <= 0):
        raise ValueError("t_grid must be strictly ascending")
    return t


def propagate(L, y0, t_grid, tol: float = 1e-10, method: str = "DOP853") -> np.ndarray:
    """
    Integrate ``dy/dt = L y`` and return ``y(t_k)`` as rows.

    ``method`` is any explicit :func:`scipy.integrate.solve_ivp` scheme, or
    ``"expm"`` for :func:`scipy.sparse.linalg.expm_multiply` (uniform grids
    only). ``y(0)`` is returned exactly.

    Raises
    ------
    StepSizeUnderflow
        If the adaptive integrator gives up before the last grid time.
    """
    t = _check_grid(t_grid)
    y0 = np.asarray(y0, dtype=complex)
    out = np.empty((t.size, y0.size), dtype=complex)
    out[0] = y0
    if t.size == 1:
        return out
    L = sp.csr_matrix(L)
    if method == "expm":
        steps = np.diff(t)
        if not np.allclose(steps, steps[0], rtol=1e-12, atol=0):
            raise ValueError("method='expm' needs a uniform grid")
        out[1:] = expm_multiply(L, y0, start=0.0, stop=t[-1], num=t.size, endpoint=True)[1:]
        return out
    sol = solve_ivp(lambda _, y: L @ y, (0.0, t[-1]), y0, method=method, t_eval=t,
                    rtol=tol, atol=tol)
    if sol.status != 0 or sol.y.shape[1] != t.size:
        raise StepSizeUnderflow(f"integration stopped early: {sol.message}")
    out[1:] = sol.y.T[1:]
    return out


def evolve(L, rho0: DensityMatrix, t_grid, tol: float = 1e-10,
           method: str = "DOP853") -> list:
    """
    ``rho(t_k) = exp(L t_k) rho0`` on a grid starting at 0.

    Parameters
    ----------
    L : sparse matrix
        Vectorized Liouvillian.
    rho0 : DensityMatrix
    t_grid : 1-D array
        Ascending times (us), ``t_grid[0] == 0``.
    tol : float
        Relative and absolute tolerance of the adaptive stepper.
    method : str
        See :func:`propagate`.
    """
    ys = propagate(L, rho0.vector, t_grid, tol, method)
    D = rho0.dims.joint
    out = [rho0]
    for y in ys[1:]:
        out.append(DensityMatrix(y.reshape(D, D), rho0.dims))
    return out


def _field_ops(rho_ss: DensityMatrix):
    ops = joint_operators(rho_ss.dims)
    a = ops.a
    seed = (a @ rho_ss.data).reshape(-1)
    # tr(a^dag X) = vec((a^dag)^T) . vec(X) for row-stacked vectors
    probe = np.asarray(ops.a_dag.T.toarray()).reshape(-1)
    mean = complex(np.trace(a @ rho_ss.data))
    return seed, probe, mean


def correlation(L, rho_ss: DensityMatrix, t_grid, tol: float = 1e-10,
                method: str = "DOP853") -> TimeSeries:
    """
    ``C(t_k) = tr[a^dag Phi_t(a rho_ss)] - |tr(a rho_ss)|^2`` on a uniform grid.
    """
    seed, probe, mean = _field_ops(rho_ss)
    ys = propagate(L, seed, t_grid, tol, method)
    return TimeSeries(np.asarray(t_grid, dtype=float), ys @ probe - abs(mean) ** 2)


def correlation_until_decay(L, rho_ss: DensityMatrix, dt: float, t_max: float = 1000.0,
                            decay: float = 1e-3, chunk: float = 20.0, tol: float = 1e-10,
                            method: str = "DOP853", floor: float = 1e-14) -> TimeSeries:
    """
    Correlation on ``0, dt, ...``, extended chunk by chunk until ``|C|`` has
    stayed below ``decay |C(0)|`` over a whole chunk, or ``t_max`` is reached.

    A ``|C(0)|`` at or below ``floor`` is rounding noise of an empty field and
    counts as decayed after the first chunk. ``meta["decayed"]`` records
    which of the two happened.
    """
    if dt <= 0 or chunk < dt or t_max < dt:
        raise ValueError("need dt > 0 and chunk, t_max >= dt")
    seed, probe, mean = _field_ops(rho_ss)
    offset = abs(mean) ** 2
    steps = max(int(round(chunk / dt)), 1)
    n_max = int(round(t_max / dt))
    vals = [complex(seed @ probe) - offset]
    ref = abs(vals[0])
    y = seed
    k = 0
    decayed = False
    while not decayed and k < n_max:
        n = min(steps, n_max - k)
        ys = propagate(L, y, dt * np.arange(n + 1), tol, method)
        c = ys[1:] @ probe - offset
        vals.extend(c)
        y = ys[-1]
        k += n
        decayed = ref <= floor or bool(np.max(np.abs(c)) < decay * ref)
    if not decayed:
        log.info("correlation still at %.2e of C(0) after %.0f us",
                 abs(vals[-1]) / ref, k * dt)
    return TimeSeries(dt * np.arange(len(vals)), np.array(vals),
                      {"decayed": decayed, "t_end": k * dt})


def power_spectrum(C: TimeSeries, pad: int = 4, decay: float = 1e-3,
                   floor: float = 1e-14) -> Spectrum:
    """
    One-sided spectrum ``S(nu) = 2 Re[FFT(w C)] dt`` on the FFT grid.

    Parameters
    ----------
    C : TimeSeries
        Correlation sampled from ``t = 0``.
    pad : int
        Zero-padding factor (interpolates the grid; does not change the
        integral of ``S``).
    decay : float
        Required ``|C(t_end)| / |C(0)|`` bound.
    floor : float
        Series with ``|C(0)| <= floor`` (an empty field) skip the decay check.

    Raises
    ------
    UndecayedCorrelation
        If ``|C(t_end)| >= decay |C(0)|``.
    """
    c = C.values
    ref = abs(c[0])
    if ref > floor and abs(c[-1]) >= decay * ref:
        raise UndecayedCorrelation(
            f"|C(t_end)|/|C(0)| = {abs(c[-1]) / max(ref, 1e-300):.2e} is not below {decay:.0e}")
    dt = C.dt
    w = c.copy()
    w[0] *= 0.5
    n = int(pad) * c.size
    F = np.fft.fft(w, n=n)
    nu = 2 * np.pi * np.fft.fftfreq(n, dt)
    S = 2.0 * F.real * dt
    return Spectrum(np.fft.fftshift(nu), np.fft.fftshift(S))
