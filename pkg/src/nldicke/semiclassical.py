"""
Mean-field limit of the model.

With ``alpha = <a>/sqrt(N)``, ``beta = <J->/N`` and ``gamma = <Jz>/N`` the
factorized equations of motion are

    alpha' = -i (w - i kappa + U gamma) alpha - i g (beta + beta^*)
    beta'  = -i (w0 + U |alpha|^2) beta + 2 i g (alpha + alpha^*) gamma
    gamma' = i g (alpha + alpha^*)(beta - beta^*)

They conserve ``|beta|^2 + gamma^2``. Internally a state is the real vector
``(Re alpha, Im alpha, Re beta, Im beta, gamma)``.

Phases are identified from long-time attractors: trajectories are started
next to every analytic fixed point and from quasi-random points on the
physical sphere, and each one is labelled by the stable fixed point it
settles on or as a limit cycle.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.stats import qmc

from .model import ModelParams

__all__ = [
    "SemiclassicalState", "FixedPoint", "FixedPointSet", "CriticalCouplings",
    "Trajectory", "AttractorLabel", "PhaseCell", "StepSizeUnderflow",
    "rhs", "jacobian", "tangent_eigenvalues", "is_stable", "integrate",
    "critical_couplings", "normal_onset", "fixed_points", "seed_states",
    "classify_attractor", "classify_cell", "phase_diagram", "stability_threshold",
    "FAMILIES",
]

log = logging.getLogger(__name__)

FAMILIES = {
    "Normal": "Normal", "Inverted": "Inverted",
    "SRA+": "SRA", "SRA-": "SRA", "SRB+": "SRB", "SRB-": "SRB",
    "LimitCycleGamma": "LimitCycle", "LimitCycle": "LimitCycle",
}


class StepSizeUnderflow(RuntimeError):
    pass


@dataclass(frozen=True)
class SemiclassicalState:
    alpha: complex
    beta: complex
    gamma: float

    @classmethod
    def from_vector(cls, y) -> "SemiclassicalState":
        return cls(complex(y[0], y[1]), complex(y[2], y[3]), float(y[4]))

    def vector(self) -> np.ndarray:
        return np.array([self.alpha.real, self.alpha.imag,
                         self.beta.real, self.beta.imag, self.gamma])

    @property
    def spin_length2(self) -> float:
        return abs(self.beta) ** 2 + self.gamma**2

    def is_physical(self, tol: float = 1e-12) -> bool:
        return self.spin_length2 <= 0.25 + tol


def _as_vector(s) -> np.ndarray:
    return s.vector() if isinstance(s, SemiclassicalState) else np.asarray(s, dtype=float)


def _rhs_vec(y, w0, w, k, g, U):
    ar, ai, br, bi, c = y
    wc = w + U * c
    om = w0 + U * (ar * ar + ai * ai)
    return np.array([
        wc * ai - k * ar,
        -wc * ar - k * ai - 2 * g * br,
        om * bi,
        -om * br + 4 * g * ar * c,
        -4 * g * ar * bi,
    ])


def _p(params: ModelParams):
    return params.omega0, params.omega, params.kappa, params.g, params.U


def rhs(params: ModelParams, s):
    """Time derivative of ``s``; returns the same type as the input."""
    d = _rhs_vec(_as_vector(s), *_p(params))
    return SemiclassicalState.from_vector(d) if isinstance(s, SemiclassicalState) else d


def jacobian(params: ModelParams, s) -> np.ndarray:
    """Analytic 5x5 Jacobian of the real-vector flow."""
    ar, ai, br, bi, c = _as_vector(s)
    w0, w, k, g, U = _p(params)
    wc = w + U * c
    om = w0 + U * (ar * ar + ai * ai)
    return np.array([
        [-k, wc, 0, 0, U * ai],
        [-wc, -k, -2 * g, 0, -U * ar],
        [2 * U * ar * bi, 2 * U * ai * bi, 0, om, 0],
        [-2 * U * ar * br + 4 * g * c, -2 * U * ai * br, -om, 0, 4 * g * ar],
        [-4 * g * bi, 0, 0, -4 * g * ar, 0],
    ])


def tangent_eigenvalues(params: ModelParams, s) -> np.ndarray:
    """
    Jacobian eigenvalues on the tangent space of the conserved spin sphere.

    The radial spin direction carries a trivial zero mode (the conserved
    length) and is projected out.
    """
    y = _as_vector(s)
    J = jacobian(params, y)
    n = np.array([0, 0, y[2], y[3], y[4]])
    if np.linalg.norm(n) == 0:
        return np.linalg.eigvals(J)
    n /= np.linalg.norm(n)
    # orthonormal basis of the complement of n
    q, _ = np.linalg.qr(np.column_stack([n, np.eye(5)]))
    B = q[:, 1:5]
    return np.linalg.eigvals(B.T @ J @ B)


def is_stable(params: ModelParams, s, margin: float = 1e-12) -> bool:
    """Linear stability: every tangent eigenvalue has real part below ``-margin``."""
    return bool(np.max(tangent_eigenvalues(params, s).real) < -margin)


# --- integration -------------------------------------------------------------

@dataclass
class Trajectory:
    t: np.ndarray
    y: np.ndarray  # shape (len(t), 5)

    def state(self, k: int = -1) -> SemiclassicalState:
        return SemiclassicalState.from_vector(self.y[k])

    @property
    def alpha(self) -> np.ndarray:
        return self.y[:, 0] + 1j * self.y[:, 1]

    @property
    def spin_length2(self) -> np.ndarray:
        return self.y[:, 2] ** 2 + self.y[:, 3] ** 2 + self.y[:, 4] ** 2


def integrate(params: ModelParams, s0, t_final: float, tol: float = 1e-10,
              t_eval=None, t0: float = 0.0) -> Trajectory:
    """
    Adaptive DOP853 integration of the mean-field equations.

    ``tol`` is the relative tolerance; the absolute tolerance is ``tol / 100``,
    which keeps the spin-length drift below ``1e-9`` over ``1e3`` us.

    Raises
    ------
    ValueError
        If ``s0`` lies outside the physical ball.
    StepSizeUnderflow
        If the integrator fails before ``t_final``.
    """
    y0 = _as_vector(s0)
    if y0[2] ** 2 + y0[3] ** 2 + y0[4] ** 2 > 0.25 + 1e-12:
        raise ValueError("initial spin vector is longer than 1/2")
    return _integrate(params, y0, t_final, tol, t_eval, t0)


def _integrate(params, y0, t_final, tol, t_eval, t0):
    pr = _p(params)
    if t_eval is None:
        t_eval = np.linspace(t0, t_final, 1001)
    sol = solve_ivp(lambda _, y: _rhs_vec(y, *pr), (t0, t_final), y0, method="DOP853",
                    rtol=tol, atol=tol * 1e-2, t_eval=t_eval)
    if sol.status != 0:
        raise StepSizeUnderflow(sol.message)
    return Trajectory(sol.t, sol.y.T)


# --- analytic results --------------------------------------------------------

@dataclass(frozen=True)
class CriticalCouplings:
    g_A_plus: float | None
    g_A_minus: float | None
    g_B: float | None


def _onset(params: ModelParams, gamma_phase: float):
    """Coupling at which the phase ``gamma_phase = -1/2`` or ``+1/2`` loses stability."""
    w0, w, k, _, U = _p(params)
    wt = w + U * gamma_phase
    if wt == 0:
        return None
    rad = -2 * gamma_phase * w0 * (k**2 + wt**2) / (4 * wt)
    return float(np.sqrt(rad)) if rad > 0 else None


def normal_onset(params: ModelParams):
    """Closed-form instability coupling of the normal phase (``None`` if it never destabilizes)."""
    return _onset(params, -0.5)


def critical_couplings(params: ModelParams) -> CriticalCouplings:
    """
    Onset couplings of superradiance from the normal (``g_A_plus``) and
    inverted (``g_A_minus``) phases, and of the SRB phase (``g_B``).

    Each is ``None`` where its radicand is not positive.
    """
    w0, w, k, _, U = _p(params)
    den = 4 * (w**2 - (U / 2) ** 2)
    g_B = None
    if den != 0:
        rad = w0 * U / den
        if rad > 0:
            g_B = float(k * np.sqrt(rad))
    return CriticalCouplings(_onset(params, -0.5), _onset(params, +0.5), g_B)


@dataclass
class FixedPoint:
    label: str
    state: SemiclassicalState
    exists: bool = True
    stable: bool | None = None

    @property
    def family(self) -> str:
        return FAMILIES[self.label]


@dataclass
class FixedPointSet:
    points: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.points)

    def __len__(self):
        return len(self.points)

    def existing(self):
        return [p for p in self.points if p.exists]

    def labels(self):
        return {p.label for p in self.points if p.exists}

    def get(self, label: str):
        return [p for p in self.points if p.label == label and p.exists]

    def stable(self):
        return [p for p in self.points if p.exists and p.stable]


def _sra_gammas(params: ModelParams):
    """Roots of the SRA condition, ``(label, gamma)``; ``None`` where not real."""
    w0, w, k, g, U = _p(params)
    A = w0 * U + 4 * g**2
    if A == 0:
        return []
    if U == 0:
        # only the branch continuous through U = 0 stays finite
        return [("SRA+", -w0 * (k**2 + w**2) / (8 * g**2 * w))] if g > 0 else []
    R = (g**2 * (4 * w**2 - U**2) - w0 * U * k**2) / A
    if R < 0:
        return []
    sr = np.sqrt(R)
    # (-w + sqrt R)/U rewritten without cancellation
    gp = -(g**2 * U + w0 * (k**2 + w**2)) / (A * (w + sr))
    with np.errstate(over="ignore"):
        # diverges as U -> 0; the |gamma| <= 1/2 filter drops it
        gm = (-w - sr) / U
    return [("SRA+", gp), ("SRA-", gm)]


def fixed_points(params: ModelParams, with_stability: bool = True) -> FixedPointSet:
    """
    All analytic fixed points with the physicality filters applied.

    Normal and inverted phases are always present. The SRA branches
    (``beta`` real) are kept when ``gamma`` is real with ``|gamma| <= 1/2``,
    SRA- only for ``U < -2w`` and SRA+ only for ``U < 2w``; both signs of
    ``alpha`` are listed. SRB (``w0 + U |alpha|^2 = 0``) exists for
    ``U < -2w`` and ``g >= g_B``; for each sign of ``alpha`` both signs of
    ``Im beta`` solve the equations and are listed. For ``U >= 2w`` the
    ``gamma = -w/U`` point with ``alpha = beta = 0`` is included as
    ``LimitCycleGamma``.
    """
    w0, w, k, g, U = _p(params)
    pts = [FixedPoint("Normal", SemiclassicalState(0j, 0j, -0.5)),
           FixedPoint("Inverted", SemiclassicalState(0j, 0j, 0.5))]

    for label, gam in _sra_gammas(params):
        allowed = U < 2 * w if label == "SRA+" else U < -2 * w
        if not (allowed and np.isfinite(gam) and abs(gam) <= 0.5):
            continue
        b = np.sqrt(max(0.25 - gam**2, 0.0))
        for sgn in (1.0, -1.0):
            beta = sgn * b
            alpha = -2 * g * beta / (w + U * gam - 1j * k)
            pts.append(FixedPoint(label, SemiclassicalState(complex(alpha), complex(beta), gam)))

    if U < -2 * w and g > 0:
        gam = -w / U
        a = np.sqrt(-w0 / U)
        rest = 0.25 - gam**2 - (k * a / (2 * g)) ** 2
        if rest >= 0:
            for label, sa in (("SRB+", 1.0), ("SRB-", -1.0)):
                rb = -k * sa * a / (2 * g)
                for sb in (1.0, -1.0):
                    beta = complex(rb, sb * np.sqrt(rest))
                    pts.append(FixedPoint(label, SemiclassicalState(1j * sa * a, beta, gam)))

    if U >= 2 * w:
        pts.append(FixedPoint("LimitCycleGamma", SemiclassicalState(0j, 0j, -w / U)))

    if with_stability:
        for p in pts:
            p.stable = is_stable(params, p.state)
    return FixedPointSet(pts)


def stability_threshold(params: ModelParams, g_lo: float, g_hi: float, rel_tol: float = 1e-6,
                        method: str = "jacobian", t_probe: float = 3000.0) -> float:
    """
    Bisect on ``g`` for the loss of stability of the normal phase.

    ``method="jacobian"`` uses the tangent-space eigenvalues;
    ``method="ode"`` integrates from a ``1e-6`` displacement for ``t_probe``
    us and calls the phase unstable when the deviation has grown.
    """
    normal = SemiclassicalState(0j, 0j, -0.5)

    def unstable(g):
        p = params.replace(g=g)
        if method == "jacobian":
            return not is_stable(p, normal)
        eps = 1e-6
        s0 = SemiclassicalState(0j, complex(eps, 0), -np.sqrt(0.25 - eps**2))
        tr = integrate(p, s0, t_probe, t_eval=np.linspace(0.8 * t_probe, t_probe, 201))
        dev = np.max(np.abs(tr.y - normal.vector()), axis=1)
        return bool(dev.max() > eps)

    if unstable(g_lo) or not unstable(g_hi):
        raise ValueError("bracket does not straddle the threshold")
    while g_hi - g_lo > rel_tol * g_hi:
        mid = 0.5 * (g_lo + g_hi)
        if unstable(mid):
            g_hi = mid
        else:
            g_lo = mid
    return 0.5 * (g_lo + g_hi)


# --- attractor classification ------------------------------------------------

@dataclass
class AttractorLabel:
    """
    Outcome of one long-time integration.

    ``kind`` is ``"FixedPoint"``, ``"LimitCycle"`` or ``"Unresolved"``; ``name``
    is the fixed-point label (e.g. ``"SRB+"``), ``"LimitCycle"`` or
    ``"Unresolved"``.
    """

    kind: str
    name: str
    final: SemiclassicalState
    t_end: float
    distance: float | None = None
    period: float | None = None
    amplitude: float | None = None
    gamma_drift: float | None = None

    @property
    def family(self) -> str:
        return FAMILIES.get(self.name, self.name)


@dataclass
class _CycleStats:
    amplitude: float  # max |alpha - <alpha>|
    abs_amplitude: float  # max | |alpha| - <|alpha|> |
    period: float | None
    peak: float
    decay: float  # relative change of the rms oscillation between window halves
    drift: float  # change of the mean of gamma between window halves


def _limit_cycle_stats(t, y) -> _CycleStats:
    alpha = y[:, 0] + 1j * y[:, 1]
    amp = float(np.max(np.abs(alpha - alpha.mean())))
    mod = np.abs(alpha)
    abs_amp = float(np.max(np.abs(mod - mod.mean())))
    half = len(t) // 2
    drift = float(abs(y[half:, 4].mean() - y[:half, 4].mean()))
    s1, s2 = np.std(alpha[:half]), np.std(alpha[half:])
    decay = float(abs(s2 - s1) / s1) if s1 > 0 else np.inf
    comp = y[:, :4]
    x = comp[:, int(np.argmax(comp.std(axis=0)))]
    x = x - x.mean()
    period, peak = None, 0.0
    n = len(x)
    if np.any(x):
        f = np.fft.rfft(x, 2 * n)
        ac = np.fft.irfft(f * np.conj(f))[:n]
        ac /= ac[0]
        neg = np.flatnonzero(ac[: n // 2] < 0)
        if neg.size:
            z = neg[0]
            k = z + int(np.argmax(ac[z:n // 2]))
            # undo the triangular bias of the raw lag sum
            peak = float(ac[k] * n / (n - k))
            period = float(k * (t[1] - t[0]))
    return _CycleStats(amp, abs_amp, period, peak, decay, drift)


def classify_attractor(params: ModelParams, s0, transient: float = 200.0, window: float = 500.0,
                       max_time: float = 3000.0, dt: float = 0.05, tol: float = 1e-10,
                       var_tol: float = 1e-10, dist_tol: float = 1e-4,
                       amp_tol: float = 1e-3, peak_tol: float = 0.9, decay_tol: float = 0.05,
                       drift_tol: float = 1e-5, fps: FixedPointSet | None = None) -> AttractorLabel:
    """
    Integrate from ``s0`` and label the long-time behaviour.

    After ``transient`` us the trailing ``window`` is examined:

    * fixed point: the variance of every component is below ``var_tol`` and
      the end state is within ``dist_tol`` of a linearly stable fixed point;
    * limit cycle: ``alpha`` oscillates with amplitude above ``amp_tol``, the
      autocorrelation has a repeat peak above ``peak_tol``, the rms
      oscillation changes by less than ``decay_tol`` (relative) and the mean
      of ``gamma`` by less than ``drift_tol`` between the two halves of the
      window. The last two reject slow spirals into a fixed point.

    If neither holds the integration is continued window by window up to
    ``max_time``; what remains is ``Unresolved``.
    """
    fps = fps if fps is not None else fixed_points(params)
    targets = [(p.label, p.state.vector()) for p in fps.stable()]
    y = _as_vector(s0)
    t_start = 0.0
    t_stop = transient + window
    while True:
        span = min(window, t_stop - t_start)
        t_eval = np.linspace(t_stop - span, t_stop, int(round(span / dt)) + 1)
        # continuation states may exceed 1/2 by the integration error
        tr = (integrate if t_start == 0 else _integrate)(params, y, t_stop, tol, t_eval, t_start)
        end = tr.y[-1]
        if np.max(tr.y.var(axis=0)) < var_tol and targets:
            dists = [np.linalg.norm(end - v) for _, v in targets]
            j = int(np.argmin(dists))
            if dists[j] < dist_tol:
                return AttractorLabel("FixedPoint", targets[j][0], tr.state(), t_stop,
                                      distance=float(dists[j]))
        st = _limit_cycle_stats(tr.t, tr.y)
        if (st.amplitude > amp_tol and st.period is not None and st.peak > peak_tol
                and st.decay < decay_tol and st.drift < drift_tol):
            return AttractorLabel("LimitCycle", "LimitCycle", tr.state(), t_stop,
                                  period=st.period, amplitude=st.amplitude,
                                  gamma_drift=st.drift)
        if t_stop >= max_time:
            return AttractorLabel("Unresolved", "Unresolved", tr.state(), t_stop,
                                  amplitude=st.amplitude, gamma_drift=st.drift)
        y, t_start = end, t_stop
        t_stop = min(t_stop + window, max_time)


def _on_sphere(gamma, phi, params: ModelParams, length: float = 0.5):
    """Spin direction plus the adiabatically slaved cavity field."""
    w, k, g, U = params.omega, params.kappa, params.g, params.U
    b = np.sqrt(max(length**2 - gamma**2, 0.0))
    beta = b * np.exp(1j * phi)
    den = w + U * gamma - 1j * k
    alpha = -2 * g * beta.real / den if den != 0 else 0j
    return SemiclassicalState(complex(alpha), complex(beta), float(gamma))


def _nudge(s: SemiclassicalState, eps: float = 1e-6) -> SemiclassicalState:
    """Deterministic small displacement that keeps the spin length."""
    y = s.vector()
    y = y + eps * np.array([1.0, 0.5, 0.7, -0.3, 0.0])
    r0 = np.sqrt(s.spin_length2)
    r = np.sqrt(y[2] ** 2 + y[3] ** 2 + y[4] ** 2)
    if r > 0:
        y[2:] *= r0 / r
    return SemiclassicalState.from_vector(y)


def seed_states(params: ModelParams, n_seeds: int, fps: FixedPointSet | None = None,
                seed: int = 0):
    """
    Initial conditions for one phase-diagram cell.

    Small displacements from the analytic candidates come first (normal,
    inverted, one member of each superradiant pair, the ``gamma = -w/U`` ring),
    then scrambled-Halton points on the spin sphere fill up to ``n_seeds``.
    """
    if n_seeds < 1:
        raise ValueError("n_seeds must be >= 1")
    fps = fps if fps is not None else fixed_points(params)
    out = []
    seen = set()
    for p in fps.existing():
        key = p.label if p.label in ("Normal", "Inverted") else (p.label, p.stable)
        if key in seen:
            continue
        seen.add(key)
        if p.label == "LimitCycleGamma":
            out.append(_on_sphere(p.state.gamma, 0.3, params))
        else:
            out.append(_nudge(p.state))
    out = out[:n_seeds]
    if len(out) < n_seeds:
        pts = qmc.Halton(d=2, scramble=True, seed=seed).random(n_seeds - len(out))
        for u, v in pts:
            out.append(_on_sphere(u - 0.5, 2 * np.pi * v, params))
    return out


@dataclass
class PhaseCell:
    g: float
    U: float
    labels: frozenset
    unresolved: int
    attractors: list = field(repr=False, default_factory=list)

    def label_string(self) -> str:
        return "+".join(sorted(self.labels)) if self.labels else "Unresolved"


def classify_cell(params: ModelParams, n_seeds: int = 8, seed: int = 0, **kw) -> PhaseCell:
    """
    Union of attractor families over the seeds of one cell.

    Unresolved seeds are counted but do not contribute a label.
    """
    fps = fixed_points(params)
    res = [classify_attractor(params, s, fps=fps, **kw)
           for s in seed_states(params, n_seeds, fps, seed)]
    labels = frozenset(r.family for r in res if r.kind != "Unresolved")
    unresolved = sum(r.kind == "Unresolved" for r in res)
    return PhaseCell(params.g, params.U, labels, unresolved, res)


def _cell_task(args):
    params, n_seeds, seed, kw = args
    return classify_cell(params, n_seeds, seed, **kw)


def phase_diagram(template: ModelParams, g_grid, U_grid, n_seeds: int = 8, seed: int = 0,
                  workers: int = 1, progress=None, **kw):
    """
    Classify every ``(g, U)`` cell; returns a list of :class:`PhaseCell` in
    row-major order (``g`` outer, ``U`` inner).

    Parameters
    ----------
    template : ModelParams
        Supplies ``omega0``, ``omega`` and ``kappa``.
    g_grid, U_grid : sequences
        Angular values (rad/us).
    n_seeds : int
        Initial conditions per cell, at least 4.
    workers : int
        Process count; results do not depend on it.
    progress : callable, optional
        Called as ``progress(done, total)``.
    """
    if n_seeds < 4:
        raise ValueError("n_seeds must be >= 4")
    g_grid = np.atleast_1d(np.asarray(g_grid, dtype=float))
    U_grid = np.atleast_1d(np.asarray(U_grid, dtype=float))
    if g_grid.size == 0 or U_grid.size == 0:
        raise ValueError("grids must be non-empty")
    if not (np.all(np.isfinite(g_grid)) and np.all(np.isfinite(U_grid))):
        raise ValueError("grids must be finite")
    tasks = [(template.replace(g=float(g), U=float(U)), n_seeds, seed, kw)
             for g in g_grid for U in U_grid]
    out = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for cell in ex.map(_cell_task, tasks):
                out.append(cell)
                if progress:
                    progress(len(out), len(tasks))
    else:
        for t in tasks:
            out.append(_cell_task(t))
            if progress:
                progress(len(out), len(tasks))
    return out
