"""
Command-line driver.

Subcommands
-----------
sweep          steady-state observables along a line in U or g
point          Wigner / spin-Q grids, field correlation and spectrum at one point
phase-diagram  mean-field attractor labels on a (g, U) grid

Frequencies on the command line are cyclic, in MHz. Every output file starts
with ``#`` comment lines carrying the tool version and the full parameter set.
"""

import argparse
import configparser
import csv
import json
import logging
import multiprocessing as mp
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import UndecayedCorrelation, correlation_until_decay, power_spectrum
from .model import TWO_PI, ModelParams, basis_state, build_liouvillian, joint_operators
from .observables import (
    VacuumField, expect, fidelity, g2_zero, log_negativity, purity, spin_qfunction, wigner,
)
from .semiclassical import FAMILIES, fixed_points, phase_diagram
from .steady_state import DegenerateNullSpace, SolverOptions, steady_state

log = logging.getLogger("nldicke")

OBSERVABLES = ("jz", "n", "g2", "log_neg", "purity", "fidelity_00")
TASKS = ("scalars", "wigner", "q", "correlation", "spectrum")
EXIT_OK, EXIT_POINT_ERROR, EXIT_USAGE = 0, 1, 2


class SpecError(ValueError):
    """Invalid sweep, point or grid specification."""


# --- parsing helpers ---------------------------------------------------------

def parse_grid(text: str) -> np.ndarray:
    """
    ``"a,b,c"`` or ``"min:max:step"`` (inclusive of ``max`` up to rounding).
    """
    text = str(text).strip()
    if not text:
        raise SpecError("empty grid")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise SpecError(f"range must be min:max:step, got {text!r}")
        lo, hi, step = (float(p) for p in parts)
        if lo > hi:
            raise SpecError(f"grid minimum {lo} exceeds maximum {hi}")
        if step <= 0:
            raise SpecError("grid step must be > 0")
        n = int(np.floor((hi - lo) / step + 1e-9))
        # integer multiples keep the grid reproducible across platforms
        return np.round(lo + step * np.arange(n + 1), 12)
    vals = np.array([float(v) for v in text.split(",") if v.strip()])
    if vals.size == 0:
        raise SpecError("empty grid")
    return vals


def parse_list(text: str, allowed=None) -> list:
    items = [s.strip() for s in str(text).split(",") if s.strip()]
    if allowed is not None:
        bad = [s for s in items if s not in allowed]
        if bad:
            raise SpecError(f"unknown entries {bad}; choose from {list(allowed)}")
    return items


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` comments; keys use flag names with ``_``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    text = Path(path).read_text()
    cp.read_string("[config]\n" + text)
    return {k.replace("-", "_"): v for k, v in cp["config"].items()}


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _header(kind: str, meta: dict) -> list:
    return [f"# nldicke {__version__} {kind}",
            "# params: " + json.dumps(meta, sort_keys=True)]


def write_csv(path, kind: str, meta: dict, columns, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        for line in _header(kind, meta):
            fh.write(line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _params_meta(p: ModelParams) -> dict:
    return {"mhz": p.mhz(), "angular_rad_per_us": {k: v for k, v in p.as_dict().items()
                                                   if k not in ("N", "n_max")},
            "N": p.N, "n_max": p.n_max}


# --- sweep -------------------------------------------------------------------

@dataclass
class SweepSpec:
    base: ModelParams
    vary: str
    grid: np.ndarray
    n_list: list
    observables: list
    out: Path
    tol: float = 1e-6
    workers: int = 1
    timeout: float = 600.0
    u_unit: str = "mhz"
    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.vary not in ("U", "g"):
            raise SpecError("vary must be 'U' or 'g'")
        if len(self.grid) == 0:
            raise SpecError("grid is empty")
        if not self.n_list or any(int(n) < 1 for n in self.n_list):
            raise SpecError("N values must be >= 1")
        if not self.observables:
            raise SpecError("at least one observable is required")
        bad = [o for o in self.observables if o not in OBSERVABLES]
        if bad:
            raise SpecError(f"unsupported observables {bad}")

    def points(self):
        """(index, ModelParams) in output order: grid value outer, N inner."""
        out = []
        for v in self.grid:
            for n in self.n_list:
                if self.vary == "U":
                    val = v * self.base.omega if self.u_unit == "omega" else TWO_PI * v
                    p = self.base.replace(U=float(val), N=int(n))
                else:
                    p = self.base.replace(g=float(TWO_PI * v), N=int(n))
                out.append(p)
        return list(enumerate(out))


def _semiclassical_ref(p: ModelParams):
    fps = fixed_points(p)
    st = [f for f in fps.stable()]
    # one representative per Z2 pair
    seen, labels, gam, phot = set(), [], [], []
    for f in st:
        key = (f.label, round(f.state.gamma, 12), round(abs(f.state.alpha), 12))
        if key in seen:
            continue
        seen.add(key)
        labels.append(f.label)
        gam.append(repr(f.state.gamma))
        phot.append(repr(p.N * abs(f.state.alpha) ** 2))
    if p.U >= 2 * p.omega:
        labels.append("LimitCycle")
        gam.append(repr(-p.omega / p.U))
        phot.append("")
    return ";".join(labels), ";".join(gam), ";".join(phot)


def evaluate_point(p: ModelParams, observables, tol: float) -> dict:
    """Steady state and requested observables at one parameter point."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateNullSpace)
        rho, used, report = steady_state(p, SolverOptions(tol=tol))
    ops = joint_operators(used.dims)
    row = {"n_max": used.n_max, "residual": rho.info["residual"],
           "iterations": rho.info["iterations"], "top_population": report.top_population,
           "cutoff_ok": report.passed, "degenerate": bool(rho.info.get("degenerate")),
           "warnings": ";".join(sorted({type(w.message).__name__ for w in caught}))}
    if "jz" in observables:
        row["jz"] = expect(ops.Jz, rho).real
        row["jz_over_N"] = row["jz"] / p.N
    if "n" in observables:
        row["n"] = expect(ops.n_op, rho).real
    if "g2" in observables:
        try:
            row["g2"] = g2_zero(rho)
        except VacuumField:
            row["g2"] = None
    if "log_neg" in observables:
        row["log_neg"] = log_negativity(rho)
    if "purity" in observables:
        row["purity"] = purity(rho)
    if "fidelity_00" in observables:
        row["fidelity_00"] = (fidelity(rho, basis_state(used.dims, 0, p.N // 2))
                              if p.N % 2 == 0 else None)
    row["sc_stable"], row["sc_gamma"], row["sc_photons"] = _semiclassical_ref(p)
    return row


def _sweep_task(args):
    idx, p, observables, tol = args
    try:
        return idx, evaluate_point(p, observables, tol), None
    except Exception as exc:  # recorded per point, the sweep goes on
        return idx, None, f"{type(exc).__name__}: {exc}"


def run_points(tasks, workers: int, timeout: float, progress=None):
    """
    Evaluate ``_sweep_task`` over ``tasks``; returns results in task order.

    Timed-out points come back as ``(idx, None, "Timeout ...")``. A timeout
    kills the worker pool (the stuck process would otherwise hold a slot) and
    the remaining points are resubmitted to a fresh one.
    """
    results = {}
    if workers <= 1 and not timeout:
        for t in tasks:
            results[t[0]] = _sweep_task(t)
            if progress:
                progress(len(results), len(tasks))
        return [results[t[0]] for t in tasks]
    ctx = mp.get_context("fork" if "fork" in mp.get_all_start_methods() else "spawn")
    todo = list(tasks)
    while todo:
        pool = ctx.Pool(max(workers, 1))
        try:
            pending = [(t[0], pool.apply_async(_sweep_task, (t,))) for t in todo]
            for idx, job in pending:
                try:
                    results[idx] = job.get(timeout=timeout or None)
                except mp.TimeoutError:
                    results[idx] = (idx, None, f"Timeout: exceeded {timeout:g} s")
                    # keep whatever already finished before restarting
                    for j, other in pending:
                        if j not in results and other.ready():
                            results[j] = other.get()
                    break
                finally:
                    if progress:
                        progress(len(results), len(tasks))
        finally:
            pool.terminate()
            pool.join()
        todo = [t for t in todo if t[0] not in results]
    return [results[t[0]] for t in tasks]


SWEEP_COLUMNS = ["g_mhz", "U_mhz", "U_over_omega", "N", "n_max", "jz", "jz_over_N", "n",
                 "g2", "log_neg", "purity", "fidelity_00", "residual", "iterations",
                 "top_population", "cutoff_ok", "degenerate", "warnings", "sc_stable",
                 "sc_gamma", "sc_photons", "error"]


def cmd_sweep(spec: SweepSpec, progress=None) -> int:
    pts = spec.points()
    tasks = [(i, p, tuple(spec.observables), spec.tol) for i, p in pts]
    results = run_points(tasks, spec.workers, spec.timeout, progress)
    cols = [c for c in SWEEP_COLUMNS
            if c not in ("jz", "jz_over_N") or "jz" in spec.observables]
    cols = [c for c in cols if c not in OBSERVABLES or c in spec.observables]
    rows, fatal = [], False
    for (i, p), (_, res, err) in zip(pts, results):
        base = {"g_mhz": p.g / TWO_PI, "U_mhz": p.U / TWO_PI, "U_over_omega": p.U / p.omega,
                "N": p.N, "n_max": p.n_max, "error": err or ""}
        if res:
            base.update(res)
        if err and not err.startswith("Timeout"):
            fatal = True
        rows.append([base.get(c) for c in cols])
    meta = {"base": _params_meta(spec.base), "vary": spec.vary, "u_unit": spec.u_unit,
            "grid": [float(v) for v in spec.grid], "N": [int(n) for n in spec.n_list],
            "observables": list(spec.observables), "tol": spec.tol}
    write_csv(spec.out, "sweep", meta, cols, rows)
    return EXIT_POINT_ERROR if fatal else EXIT_OK


# --- point -------------------------------------------------------------------

@dataclass
class PointSpec:
    params: ModelParams
    tasks: list
    out: Path
    tol: float = 1e-6
    wigner_extent: float = 3.0
    wigner_points: int = 81
    q_points: int = 64
    corr_dt: float = 0.01
    corr_tmax: float = 1000.0
    flip_poles: bool = False

    def __post_init__(self):
        if not self.tasks:
            raise SpecError("at least one task is required")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise SpecError(f"unknown tasks {bad}")
        if self.wigner_points < 3 or self.q_points < 3:
            raise SpecError("grids need at least 3 points per axis")


def cmd_point(spec: PointSpec) -> int:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    p = spec.params
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateNullSpace)
        rho, used, report = steady_state(p, SolverOptions(tol=spec.tol))
    meta = _params_meta(used)
    manifest = {
        "version": __version__, "params": meta, "tasks": list(spec.tasks), "files": {},
        "solver": {"residual": rho.info["residual"], "iterations": rho.info["iterations"],
                   "sigma": rho.info["sigma"], "top_population": report.top_population,
                   "cutoff_ok": report.passed, "n_max": used.n_max,
                   "degenerate": bool(rho.info.get("degenerate"))},
        "warnings": sorted({type(w.message).__name__ for w in caught}),
        "flags": {"DegenerateNullSpace": bool(rho.info.get("degenerate")),
                  "UndecayedCorrelation": False},
    }
    ops = joint_operators(used.dims)

    if "scalars" in spec.tasks:
        try:
            g2 = g2_zero(rho)
        except VacuumField:
            g2 = None
        vals = {"jz": expect(ops.Jz, rho).real, "n": expect(ops.n_op, rho).real, "g2": g2,
                "log_neg": log_negativity(rho), "purity": purity(rho),
                "fidelity_00": (fidelity(rho, basis_state(used.dims, 0, p.N // 2))
                                if p.N % 2 == 0 else None)}
        write_csv(out / "scalars.csv", "scalars", meta, ["name", "value"], vals.items())
        manifest["files"]["scalars"] = "scalars.csv"

    if "wigner" in spec.tasks:
        x = np.linspace(-spec.wigner_extent, spec.wigner_extent, spec.wigner_points)
        W = wigner(rho, x, x)
        write_csv(out / "wigner.csv", "wigner", meta, ["x", "y", "W"], W.rows())
        manifest["files"]["wigner"] = "wigner.csv"
        manifest["wigner"] = {"integral": W.integral(),
                              "local_maxima": [[float(a), float(b), float(c)]
                                               for a, b, c in W.local_maxima()]}

    if "q" in spec.tasks:
        th = np.linspace(0, np.pi, spec.q_points)
        ph = np.linspace(0, 2 * np.pi, spec.q_points, endpoint=False)
        Q = spin_qfunction(rho, th, ph, flip_poles=spec.flip_poles)
        write_csv(out / "spin_q.csv", "spin_q", meta, ["theta", "phi", "Q"], Q.rows())
        manifest["files"]["q"] = "spin_q.csv"
        manifest["spin_q"] = {"normalization": Q.normalization(),
                              "flip_poles": spec.flip_poles}

    if "correlation" in spec.tasks or "spectrum" in spec.tasks:
        L = build_liouvillian(used)
        C = correlation_until_decay(L, rho, spec.corr_dt, t_max=spec.corr_tmax)
        write_csv(out / "correlation.csv", "correlation", meta, ["t", "re_C", "im_C"], C.rows())
        manifest["files"]["correlation"] = "correlation.csv"
        manifest["correlation"] = {"C0": [C.values[0].real, C.values[0].imag],
                                   "t_end": float(C.t[-1]), "decayed": C.meta["decayed"]}
        if "spectrum" in spec.tasks:
            try:
                S = power_spectrum(C)
            except UndecayedCorrelation as exc:
                manifest["flags"]["UndecayedCorrelation"] = True
                manifest["spectrum"] = {"omitted": str(exc)}
            else:
                write_csv(out / "spectrum.csv", "spectrum", meta, ["nu", "S"], S.rows())
                manifest["files"]["spectrum"] = "spectrum.csv"
                manifest["spectrum"] = {"integral": S.integral(), "dnu": S.dnu}

    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                                  default=_json_default) + "\n")
    return EXIT_OK


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


# --- phase diagram -----------------------------------------------------------

@dataclass
class PhaseSpec:
    base: ModelParams
    g_grid: np.ndarray
    u_grid: np.ndarray
    out: Path
    n_seeds: int = 8
    workers: int = 1
    u_unit: str = "omega"

    def __post_init__(self):
        if len(self.g_grid) == 0 or len(self.u_grid) == 0:
            raise SpecError("grids must be non-empty")
        if self.n_seeds < 4:
            raise SpecError("n_seeds must be >= 4")


def cmd_phase_diagram(spec: PhaseSpec, progress=None) -> int:
    g = TWO_PI * np.asarray(spec.g_grid, dtype=float)
    if spec.u_unit == "omega":
        U = spec.base.omega * np.asarray(spec.u_grid, dtype=float)
    else:
        U = TWO_PI * np.asarray(spec.u_grid, dtype=float)
    cells = phase_diagram(spec.base, g, U, spec.n_seeds, workers=spec.workers,
                          progress=progress)
    rows = [(c.g / TWO_PI, c.U / TWO_PI, c.U / spec.base.omega, c.label_string(),
             c.unresolved, spec.n_seeds) for c in cells]
    meta = {"base": _params_meta(spec.base), "g_grid_mhz": [float(v) for v in spec.g_grid],
            "u_grid": [float(v) for v in spec.u_grid], "u_unit": spec.u_unit,
            "n_seeds": spec.n_seeds, "families": sorted(set(FAMILIES.values()))}
    write_csv(spec.out, "phase-diagram", meta,
              ["g_mhz", "U_mhz", "U_over_omega", "labels", "unresolved", "n_seeds"], rows)
    return EXIT_OK


# --- argument handling -------------------------------------------------------

def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--omega0", type=float, default=0.05, help="atomic frequency, MHz")
    p.add_argument("--omega", type=float, default=1.0, help="cavity frequency, MHz")
    p.add_argument("--kappa", type=float, default=0.2, help="field decay rate, MHz")
    p.add_argument("--g", type=float, default=0.01, help="linear coupling, MHz")
    p.add_argument("--u", type=float, default=0.0, help="non-linear coupling, MHz")
    p.add_argument("--n-atoms", default="10", help="atom number (sweep: comma list)")
    p.add_argument("--n-max", type=int, default=9, help="initial Fock cutoff")
    p.add_argument("--tol", type=float, default=1e-6, help="steady-state residual tolerance")
    p.add_argument("--out", required=False, help="output file (sweep, phase-diagram) or directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nldicke", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"nldicke {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sweep", help="steady-state observables along U or g")
    _common(s)
    s.add_argument("--vary", choices=("U", "g"), default="U")
    s.add_argument("--values", default="-10:10:0.5", help="'a,b,c' or 'min:max:step'")
    s.add_argument("--u-unit", choices=("mhz", "omega"), default="omega",
                   help="unit of U values in --values")
    s.add_argument("--observables", default=",".join(OBSERVABLES))
    s.add_argument("--timeout", type=float, default=600.0, help="per-point limit, s (0: none)")

    pt = sub.add_parser("point", help="phase-space functions and spectra at one point")
    _common(pt)
    pt.add_argument("--tasks", default=",".join(TASKS))
    pt.add_argument("--wigner-extent", type=float, default=3.0)
    pt.add_argument("--wigner-points", type=int, default=81)
    pt.add_argument("--q-points", type=int, default=64)
    pt.add_argument("--corr-dt", type=float, default=0.01, help="us")
    pt.add_argument("--corr-tmax", type=float, default=1000.0, help="us")
    pt.add_argument("--flip-poles", action="store_true", help="put the all-up state at theta=0")

    ph = sub.add_parser("phase-diagram", help="mean-field attractor labels on a grid")
    _common(ph)
    ph.add_argument("--g-values", default="0.01:0.2:0.01", help="MHz")
    ph.add_argument("--u-values", default="-10:10:1")
    ph.add_argument("--u-unit", choices=("mhz", "omega"), default="omega")
    ph.add_argument("--n-seeds", type=int, default=8)
    return ap


_BOOL = {"flip_poles", "verbose"}


def _apply_config(parser, argv):
    """Return argv parsed with config-file values as defaults."""
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    cfg = read_config(args.config)
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise SpecError(f"unknown config keys {unknown}")
    defaults = {}
    for a in sub._actions:
        if a.dest in cfg:
            v = cfg[a.dest]
            if a.dest in _BOOL:
                defaults[a.dest] = v.strip().lower() in ("1", "true", "yes", "on")
            else:
                defaults[a.dest] = a.type(v) if a.type else v
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _base(args, N=None) -> ModelParams:
    n = int(N if N is not None else parse_list(args.n_atoms)[0])
    return ModelParams.from_mhz(args.omega0, args.omega, args.kappa, args.g, args.u,
                                n, args.n_max)


def _progress(done, total):
    print(f"\r{done}/{total}", end="\n" if done == total else "", file=sys.stderr, flush=True)


_GRID_FLAGS = ("--values", "--g-values", "--u-values")


def _join_negative_grids(argv):
    """Turn ``--values -4:4:1`` into ``--values=-4:4:1`` so argparse keeps the sign."""
    out, it = [], iter(argv)
    for a in it:
        if a in _GRID_FLAGS:
            nxt = next(it, None)
            if nxt is not None and nxt.startswith("-") and nxt[1:2] not in ("", "-") \
                    and not nxt[1].isalpha():
                out.append(f"{a}={nxt}")
                continue
            out.append(a)
            if nxt is not None:
                out.append(nxt)
        else:
            out.append(a)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    argv = _join_negative_grids(sys.argv[1:] if argv is None else list(argv))
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "sweep":
            spec = SweepSpec(base=_base(args), vary=args.vary, grid=parse_grid(args.values),
                             n_list=[int(n) for n in parse_list(args.n_atoms)],
                             observables=parse_list(args.observables),
                             out=Path(args.out or "sweep.csv"), tol=args.tol,
                             workers=args.workers, timeout=args.timeout, u_unit=args.u_unit)
            return cmd_sweep(spec, _progress if args.verbose else None)
        if args.command == "point":
            spec = PointSpec(params=_base(args), tasks=parse_list(args.tasks),
                             out=Path(args.out or "point"), tol=args.tol,
                             wigner_extent=args.wigner_extent, wigner_points=args.wigner_points,
                             q_points=args.q_points, corr_dt=args.corr_dt,
                             corr_tmax=args.corr_tmax, flip_poles=args.flip_poles)
            return cmd_point(spec)
        spec = PhaseSpec(base=_base(args), g_grid=parse_grid(args.g_values),
                         u_grid=parse_grid(args.u_values), out=Path(args.out or "phase.csv"),
                         n_seeds=args.n_seeds, workers=args.workers, u_unit=args.u_unit)
        return cmd_phase_diagram(spec, _progress)
    except (SpecError, ValueError) as exc:
        print(f"nldicke: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
