"""
Acceptance suite. Each test records one PASS/FAIL line in ``ACCEPTANCE_LINES``;
the lines are printed in the terminal summary.
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from nldicke.dynamics import (
    TimeSeries, UndecayedCorrelation, correlation, correlation_until_decay, power_spectrum,
    uniform_grid,
)
from nldicke.model import ModelParams, basis_state, build_liouvillian, joint_operators
from nldicke.observables import expect, fidelity, partial_trace, wigner
from nldicke.semiclassical import classify_cell, normal_onset, stability_threshold
from nldicke.steady_state import (
    solve_dense_nullspace, solve_inverse_power, steady_state, trace_distance,
)

from conftest import ACCEPTANCE_LINES, cut

MHZ = 2 * np.pi
LOW_G_GRID = np.arange(-10.0, 10.0 + 0.25, 0.5)
LARGE_U = (250.0, 500.0, 1000.0)


def record(key, ok, text, expected_fail=False):
    status = ("XFAIL" if expected_fail else "FAIL") if not ok else "PASS"
    ACCEPTANCE_LINES[key] = f"[{status:5s}] {key:4s} {text}"
    return ok


class StateCache:
    """Steady states with their observables, solved once per session."""

    def __init__(self):
        self.items = {}

    def get(self, g, U_over_omega):
        key = (g, U_over_omega)
        if key not in self.items:
            rho, used, _ = steady_state(cut(g, U_over_omega))
            ops = joint_operators(used.dims)
            self.items[key] = dict(
                rho=rho, params=used,
                n=expect(ops.n_op, rho).real,
                a=expect(ops.a, rho),
                jz=expect(ops.Jz, rho).real / used.N,
            )
        return self.items[key]


@pytest.fixture(scope="module")
def cache():
    return StateCache()


@pytest.fixture(scope="module")
def low_g_cut(cache):
    return {u: cache.get(0.01, u) for u in LOW_G_GRID}


@pytest.fixture(scope="module")
def transition(cache):
    return {u: cache.get(0.1, u) for u in (-4.0, -1.0, 0.0)}


@pytest.fixture(scope="module")
def large_u(cache):
    return {s * u: cache.get(0.01, s * u) for u in LARGE_U for s in (-1, 1)}


# --- 1 ---------------------------------------------------------------------------

def test_c1_oracle_equivalence():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        p = ModelParams(
            omega0=rng.uniform(0.1, 2), omega=rng.uniform(0.5, 3), kappa=rng.uniform(0.2, 2),
            g=rng.uniform(0.1, 1), U=rng.uniform(-5, 5), N=int(rng.integers(1, 4)),
            n_max=int(rng.integers(1, 4)))
        L = build_liouvillian(p)
        worst = max(worst, trace_distance(solve_inverse_power(L, dims=p.dims),
                                          solve_dense_nullspace(L, p.dims)))
    ok = record("1", worst < 1e-6,
                f"inverse power vs dense null space, 10 cases: max trace distance {worst:.1e}")
    assert ok


# --- 3 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c3_low_g_cut(low_g_cut):
    n_low = max(s["n"] for u, s in low_g_cut.items() if u < 1.5)
    ratio = low_g_cut[3.0]["n"] / low_g_cut[1.0]["n"]
    jz1, jz4 = low_g_cut[1.0]["jz"], low_g_cut[4.0]["jz"]
    ok = (n_low < 0.05 and ratio > 3 and abs(jz4 + 0.25) < 0.1 and jz4 > jz1)
    record("3", ok, f"low-g cut N=10: max <n>(U<1.5w) = {n_low:.1e}, n(3w)/n(w) = {ratio:.2f}, "
                    f"Jz/N: {jz1:.3f} (w) -> {jz4:.3f} (4w, target -0.25 +- 0.1)")
    assert n_low < 0.05
    assert ratio > 3
    assert jz4 > jz1
    assert abs(jz4 + 0.25) < 0.1


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at N=10 the U=w population only reaches Jz/N = -0.34; "
                                       "the -0.4 level is crossed near U=1.4w")
def test_c3_spin_depletion_at_u_equal_omega(low_g_cut):
    jz1 = low_g_cut[1.0]["jz"]
    ok = record("3.b", jz1 < -0.4, f"Jz/N at U=w below -0.4: {jz1:.4f}", expected_fail=True)
    assert ok


# --- 4 ---------------------------------------------------------------------------

WIGNER_X = np.linspace(-4.0, 4.0, 81)


def cavity_wigner(state):
    return wigner(partial_trace(state["rho"], "cavity"), WIGNER_X, WIGNER_X)


@pytest.mark.slow
def test_c4_transition_photon_ratio_and_normal_wigner(transition):
    ratio = transition[-4.0]["n"] / transition[-1.0]["n"]
    peaks = cavity_wigner(transition[0.0]).local_maxima()
    step = WIGNER_X[1] - WIGNER_X[0]
    centred = len(peaks) == 1 and np.hypot(peaks[0][0], peaks[0][1]) < step
    ok = ratio > 2 and centred
    where = [(round(float(p[0]), 2), round(float(p[1]), 2)) for p in peaks]
    record("4", ok, f"g=0.1 N=10: n(-4w)/n(-w) = {ratio:.2f}; Wigner at U=0 has "
                    f"{len(peaks)} maximum at {where}")
    assert ratio > 2
    assert centred


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="at N=10 the U=-4w cavity Wigner function is unimodal")
def test_c4_bimodal_wigner_at_minus_four_omega(transition):
    peaks = cavity_wigner(transition[-4.0]).local_maxima()
    ok = record("4.b", len(peaks) == 2,
                f"Wigner at U=-4w has two maxima: found {len(peaks)}", expected_fail=True)
    assert ok


# --- 5 ---------------------------------------------------------------------------

def test_c5_threshold_calibration():
    p = cut(0.1, 0.0)
    g = stability_threshold(p, 0.1 * MHZ, 0.13 * MHZ) / MHZ
    closed = normal_onset(p) / MHZ
    ok = abs(g / 0.1140 - 1) < 0.01 and abs(g / closed - 1) < 1e-5
    record("5", ok, f"normal-phase stability threshold at U=0: g = {g:.5f} MHz "
                    f"(closed form {closed:.5f})")
    assert abs(g / 0.1140 - 1) < 0.01
    assert g == pytest.approx(closed, rel=1e-5)


# --- 6 ---------------------------------------------------------------------------

PROBE_CELLS = [
    (0.01, -4.0, lambda s: s == {"Normal", "Inverted"}, "Normal+Inverted"),
    (0.01, 0.0, lambda s: s == {"Normal"}, "Normal"),
    (0.1, -4.0, lambda s: "SRB" in s, "SRB present"),
    (0.01, 4.0, lambda s: "LimitCycle" in s, "LimitCycle"),
]


@pytest.mark.slow
def test_c6_phase_diagram_probe_cells():
    found, ok = [], True
    for g, u, check, want in PROBE_CELLS:
        cell = classify_cell(cut(g, u), n_seeds=8)
        ok &= check(cell.labels)
        found.append(f"({g}, {u:+.0f}w): {cell.label_string()} [{want}]")
    record("6", ok, "probe cells, 8 seeds: " + "; ".join(found))
    assert ok


# --- 7 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c7_large_u_limit(large_u):
    fid = {}
    for u, s in large_u.items():
        dims = s["params"].dims
        fid[u] = fidelity(s["rho"], basis_state(dims, 0, s["params"].N // 2))
    ends = fid[-1000.0] > 0.9 and fid[1000.0] > 0.9
    mono = all(fid[s * LARGE_U[i]] <= fid[s * LARGE_U[i + 1]] + 1e-12
               for s in (-1, 1) for i in range(len(LARGE_U) - 1))
    text = ", ".join(f"{u:+.0f}: {f:.4f}" for u, f in sorted(fid.items()))
    record("7", ends and mono, f"fidelity with |0,0> at g=0.01 N=10 (U/2pi MHz): {text}")
    assert ends and mono


# --- 8 ---------------------------------------------------------------------------

@pytest.mark.slow
def test_c8_correlation_and_spectrum(transition):
    err = 0.0
    for s in transition.values():
        C = correlation(build_liouvillian(s["params"]), s["rho"], uniform_grid(0.1, 0.01))
        err = max(err, abs(C.values[0] - (s["n"] - abs(s["a"]) ** 2)))

    s = transition[0.0]
    C = correlation_until_decay(build_liouvillian(s["params"]), s["rho"], 0.01, t_max=400.0)
    S = power_spectrum(C)
    parseval = abs(S.integral() / C.values[0].real - 1)

    k, w, dt = 0.5, 2 * np.pi, 0.005
    t = uniform_grid(30.0, dt)
    Sy = power_spectrum(TimeSeries(t, np.exp((-k + 1j * w) * t)))
    bins = abs(Sy.nu[int(np.argmax(Sy.values))] - w) / Sy.dnu

    ok = err < 1e-8 and parseval < 0.02 and bins <= 1
    record("8", ok, f"C(0) vs variance at 3 points: {err:.1e}; Parseval at (0.1, U=0) "
                    f"after {C.meta['t_end']:.0f} us: {parseval:.1e}; synthetic peak offset "
                    f"{bins:.2f} bins")
    assert err < 1e-8
    assert parseval < 0.02
    assert bins <= 1


@pytest.mark.slow
def test_c8_undecayed_correlation_is_not_transformed(transition):
    s = transition[-1.0]
    C = correlation_until_decay(build_liouvillian(s["params"]), s["rho"], 0.01, t_max=20.0)
    assert not C.meta["decayed"]
    with pytest.raises(UndecayedCorrelation):
        power_spectrum(C)


# --- 9 ---------------------------------------------------------------------------

PROPERTY_SUITES = [
    "tests/test_operators.py::test_spin_algebra",
    "tests/test_semiclassical.py::test_spin_length_drift",
    "tests/test_observables.py::test_wigner_normalization",
    "tests/test_observables.py::test_q_normalization",
    "tests/test_observables.py::test_log_negativity_side_invariance",
    "tests/test_observables.py::test_purity_and_fidelity_closed_forms",
]


def test_c9_property_suites_standalone():
    root = Path(__file__).resolve().parent.parent
    res = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                          *PROPERTY_SUITES], cwd=root, capture_output=True, text=True)
    tail = res.stdout.strip().splitlines()[-1] if res.stdout.strip() else res.stderr[-200:]
    ok = record("9", res.returncode == 0, f"standalone property suites: {tail}")
    assert ok, res.stdout[-2000:]


# --- 2 (runs last: validates every state solved above) -------------------------

@pytest.mark.slow
def test_c2_state_validity(cache, low_g_cut, transition, large_u):
    worst = dict(trace=0.0, herm=0.0, eig=np.inf, res=0.0, j2=0.0)
    for s in cache.items.values():
        rho, p = s["rho"], s["params"]
        J2 = joint_operators(p.dims).J2
        worst["trace"] = max(worst["trace"], rho.trace_error())
        worst["herm"] = max(worst["herm"], rho.hermiticity_error())
        worst["eig"] = min(worst["eig"], rho.min_eigenvalue())
        worst["res"] = max(worst["res"], rho.info["residual"])
        worst["j2"] = max(worst["j2"], abs(expect(J2, rho) - (p.N / 2) * (p.N / 2 + 1)))
    ok = (worst["trace"] < 1e-10 and worst["herm"] < 1e-10 and worst["eig"] > -1e-8
          and worst["res"] < 1e-6 and worst["j2"] < 1e-8)
    record("2", ok, f"{len(cache.items)} steady states: trace {worst['trace']:.1e}, "
                    f"hermiticity {worst['herm']:.1e}, min eig {worst['eig']:.1e}, "
                    f"residual {worst['res']:.1e}, J2 {worst['j2']:.1e}")
    assert ok
