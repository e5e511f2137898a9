"""
Steady states of the master equation.

The production path is shifted inverse power iteration on the sparse
Liouvillian: factor ``L - sigma I`` once, then repeatedly back-substitute and
renormalize by the trace until ``||L vec(rho)||_inf`` drops below the
tolerance. A dense eigen-decomposition of ``L`` serves as an independent
oracle for small systems.
"""

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs, splu

from .model import DensityMatrix, ModelParams, build_liouvillian
from .operators import HilbertDims, trace_vector

__all__ = [
    "SolverOptions", "NonConvergence", "DegenerateNullSpace",
    "DegenerateNullSpaceError", "DenseLimitExceeded", "CutoffReport",
    "solve_inverse_power", "solve_dense_nullspace", "check_cutoff",
    "steady_state", "trace_distance",
]

log = logging.getLogger(__name__)


class NonConvergence(RuntimeError):
    """Inverse power iteration hit ``max_iter`` above tolerance."""

    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


class DegenerateNullSpace(UserWarning):
    """The Liouvillian has more than one (numerically) zero eigenvalue."""


class DegenerateNullSpaceError(RuntimeError):
    """Raised by the dense oracle when the null space is not one-dimensional."""


class DenseLimitExceeded(ValueError):
    pass


@dataclass
class SolverOptions:
    """
    Parameters
    ----------
    tol : float
        Absolute tolerance on ``||L vec(rho)||_inf``.
    max_iter : int
        Maximum number of back-substitutions.
    shift : float
        Shift ``sigma`` relative to the max-row-sum norm of ``L``.
    seed_state : DensityMatrix, optional
        Starting vector. Defaults to the maximally mixed state. Only matters
        when the null space is degenerate (g = 0).
    check_degeneracy : bool
        Estimate the two smallest eigenvalues of ``L`` (reusing the
        factorization) and warn when they cannot be told apart.
    refine_shift : bool
        Lower the shift and refactor when a slow mode sits within ``10 sigma``
        of zero.
    min_shift : float
        Floor for the refined shift, relative to the norm of ``L``.
    """

    tol: float = 1e-6
    max_iter: int = 50
    shift: float = 1e-10
    seed_state: DensityMatrix | None = None
    check_degeneracy: bool = True
    refine_shift: bool = True
    min_shift: float = 1e-16

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.shift > 0:
            raise ValueError("shift must be > 0")
        if not 0 < self.min_shift <= self.shift:
            raise ValueError("min_shift must be in (0, shift]")


def _dims_from_liouvillian(L) -> int:
    n = L.shape[0]
    if L.shape[0] != L.shape[1]:
        raise ValueError(f"Liouvillian must be square, got {L.shape}")
    D = int(round(np.sqrt(n)))
    if D * D != n:
        raise ValueError(f"Liouvillian size {n} is not a square number")
    return D


def _norm_inf(L) -> float:
    return float(abs(L).sum(axis=1).max())


def _finalize(x, D: int) -> np.ndarray:
    rho = x.reshape(D, D)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def _trace_blocks(L, D):
    """
    Weakly connected components of ``L`` that contain a diagonal entry of rho.

    ``L`` is block diagonal over its connected components (for this model,
    total excitation parity splits it in two; at g = 0 it splits further).
    Components without a diagonal index carry no trace; the shifted inverse
    iteration suppresses them by ``sigma / |lambda|`` per step, so they are
    not factored at all.
    """
    pattern = sp.csr_matrix((np.ones(L.nnz), L.indices, L.indptr), shape=L.shape)
    _, labels = connected_components(pattern, directed=True, connection="weak")
    diag = np.arange(D) * (D + 1)
    return [np.flatnonzero(labels == c) for c in np.unique(labels[diag])]


def _block_eigenvalues(B, lu, sigma, k=2):
    """Eigenvalues of block ``B`` closest to ``sigma`` (dense for tiny blocks)."""
    n = B.shape[0]
    if n <= 64:
        w = la.eigvals(B.toarray())
        return w[np.argsort(np.abs(w))][:k]
    opinv = LinearOperator((n, n), matvec=lu.solve, dtype=complex)
    vals = eigs(B, k=k, sigma=sigma, OPinv=opinv, which="LM",
                return_eigenvectors=False, maxiter=2000, tol=1e-12)
    return vals[np.argsort(np.abs(vals))]


def _factor_blocks(L, D, sigma):
    out = []
    for idx in _trace_blocks(L, D):
        B = sp.csc_matrix(L[idx][:, idx])
        shifted = B - sigma * sp.identity(idx.size, dtype=complex, format="csc")
        out.append((idx, B, splu(sp.csc_matrix(shifted))))
    return out


def _iterate(L, blocks, x, tvec, opts, it0=0, check_step=False):
    """Back-substitute until the residual (and optionally the step) is below tol."""
    residual = np.inf
    it = it0
    while it < opts.max_iter:
        it += 1
        prev = x.copy()
        for idx, _, lu in blocks:
            x[idx] = lu.solve(x[idx])
        tr = tvec @ x
        if tr == 0 or not np.isfinite(tr):
            raise NonConvergence("iterate lost its trace", residual, it)
        x /= tr
        residual = float(np.max(np.abs(L @ x)))
        step = float(np.max(np.abs(x - prev)))
        if residual < opts.tol and (step < opts.tol or not check_step):
            return x, residual, it
    raise NonConvergence(
        f"residual {residual:.3e} above tol {opts.tol:.1e} after {it} iterations",
        residual, it)


def _second_eigenvalue(blocks, sigma):
    vals = np.concatenate([_block_eigenvalues(B, lu, sigma) for _, B, lu in blocks])
    return vals[np.argsort(np.abs(vals))][:2]


def solve_inverse_power(L, opts: SolverOptions | None = None,
                        dims: HilbertDims | None = None) -> DensityMatrix:
    """
    Steady state of ``L`` by shifted inverse power iteration.

    Each sweep solves ``(L - sigma I) x_new = x`` with an LU factorization
    computed once, then rescales ``x_new`` to unit trace. The loop stops as
    soon as ``||L x||_inf < tol``. Only the connected blocks of ``L`` that touch the diagonal
    of rho are factored; this gives the iterates of the full factorization up
    to terms of order ``sigma``.

    If the slowest decaying mode has ``|lambda_2| < 10 sigma`` the iteration
    cannot suppress it, so (with ``opts.refine_shift``) the shift is lowered
    to ``1e-6 |lambda_2|`` (floored at ``opts.min_shift`` relative to the
    norm), ``L`` is refactored and the iteration continues until the change
    between successive iterates is also below ``tol``. This matters at
    large ``|U|``, where the relaxation towards the steady state is very slow.

    Parameters
    ----------
    L : sparse matrix
        Vectorized Liouvillian, ``D^2 x D^2``.
    opts : SolverOptions
    dims : HilbertDims, optional
        Attached to the result. Inferred from ``opts.seed_state`` when
        possible; otherwise a single-factor layout (``n_max=0``) is assumed.

    Returns
    -------
    DensityMatrix
        Symmetrized, trace-normalized state; ``info`` holds ``residual``,
        ``iterations``, ``sigma``, ``eigenvalues`` (when computed) and
        ``degenerate``.

    Raises
    ------
    NonConvergence
        When the iteration is still above ``opts.tol`` after ``max_iter``
        back-substitutions.
    """
    opts = opts or SolverOptions()
    D = _dims_from_liouvillian(L)
    if dims is None:
        dims = opts.seed_state.dims if opts.seed_state is not None else HilbertDims(0, D - 1)
    if dims.joint != D:
        raise ValueError(f"dims give D={dims.joint} but L implies D={D}")

    L = sp.csr_matrix(L)
    tvec = trace_vector(D)
    norm = _norm_inf(L)
    sigma = opts.shift * norm
    blocks = _factor_blocks(L, D, sigma)

    if opts.seed_state is not None:
        x0 = np.asarray(opts.seed_state.vector, dtype=complex)
    else:
        x0 = (np.eye(D, dtype=complex) / D).reshape(-1)
    x = np.zeros(D * D, dtype=complex)
    for idx, _, _ in blocks:
        x[idx] = x0[idx]

    x, residual, it = _iterate(L, blocks, x, tvec, opts)

    vals = None
    if opts.check_degeneracy or opts.refine_shift:
        try:
            vals = _second_eigenvalue(blocks, sigma)
        except (ArpackError, ArpackNoConvergence) as exc:
            log.debug("eigenvalue estimate skipped: %s", exc)
    if (opts.refine_shift and vals is not None and vals.size > 1
            and abs(vals[1]) < 10 * sigma and sigma > opts.min_shift * norm):
        sigma = max(1e-6 * abs(vals[1]), opts.min_shift * norm)
        log.info("slow mode |lambda_2| = %.2e, refining shift to %.2e", abs(vals[1]), sigma)
        blocks = _factor_blocks(L, D, sigma)
        x, residual, it = _iterate(L, blocks, x, tvec, opts, it, check_step=True)

    rho = _finalize(x, D)
    residual = float(np.max(np.abs(L @ rho.reshape(-1))))
    if residual >= opts.tol:
        raise NonConvergence(
            f"symmetrized state has residual {residual:.3e}", residual, it)

    info = {"residual": residual, "iterations": it, "sigma": sigma,
            "degenerate": False, "blocks": len(blocks)}
    if vals is not None:
        info["eigenvalues"] = vals
        # inverse iteration cannot separate eigenvalues within a few sigma
        if opts.check_degeneracy and vals.size > 1 and abs(vals[1]) < 10 * sigma:
            info["degenerate"] = True
            warnings.warn(
                f"null space is degenerate (|lambda_2| = {abs(vals[1]):.2e}); "
                "result depends on the seed state", DegenerateNullSpace, stacklevel=2)
    return DensityMatrix(rho, dims, info)


def solve_dense_nullspace(L, dims: HilbertDims | None = None, dense_limit: int = 64,
                          zero_tol: float = 1e-8) -> DensityMatrix:
    """
    Validation oracle: eigenvector of the smallest-magnitude eigenvalue of dense ``L``.

    Raises
    ------
    DenseLimitExceeded
        If the Hilbert-space dimension exceeds ``dense_limit``.
    DegenerateNullSpaceError
        If the smallest eigenvalue is not zero to ``zero_tol`` or the second
        smallest is.
    """
    D = _dims_from_liouvillian(L)
    if D > dense_limit:
        raise DenseLimitExceeded(f"D={D} exceeds the dense limit {dense_limit}")
    if dims is None:
        dims = HilbertDims(0, D - 1)
    M = L.toarray() if sp.issparse(L) else np.asarray(L, dtype=complex)
    w, v = la.eig(M)
    order = np.argsort(np.abs(w))
    lam0, lam1 = w[order[0]], w[order[1]]
    if abs(lam0) >= zero_tol:
        raise DegenerateNullSpaceError(f"smallest eigenvalue {abs(lam0):.3e} is not zero")
    if abs(lam1) < zero_tol:
        raise DegenerateNullSpaceError(
            f"second eigenvalue {abs(lam1):.3e} is also zero; steady state not unique")
    rho = _finalize(v[:, order[0]], D)
    return DensityMatrix(rho, dims, {"eigenvalues": w[order[:2]],
                                     "residual": float(np.max(np.abs(M @ rho.reshape(-1))))})


@dataclass
class CutoffReport:
    top_population: float
    threshold: float
    populations: np.ndarray = field(repr=False)

    @property
    def passed(self) -> bool:
        return self.top_population < self.threshold


def check_cutoff(rho: DensityMatrix, threshold: float = 1e-6) -> CutoffReport:
    """Population of the highest retained Fock level, from the cavity marginal."""
    dc, ds = rho.dims.cavity, rho.dims.spin
    blocks = rho.data.reshape(dc, ds, dc, ds)
    pops = np.real(np.einsum("isis->i", blocks))
    return CutoffReport(float(max(pops[-1], 0.0)), threshold, pops)


def trace_distance(rho, sigma) -> float:
    """``||rho - sigma||_1 / 2`` for Hermitian inputs."""
    a = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    b = sigma.data if isinstance(sigma, DensityMatrix) else np.asarray(sigma)
    d = a - b
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T)))))


def steady_state(params: ModelParams, opts: SolverOptions | None = None,
                 auto_cutoff: bool = True, cutoff_threshold: float = 1e-6,
                 n_max_step: int = 2, n_max_limit: int = 40):
    """
    Solve, check the Fock cutoff and, if requested, raise ``n_max`` until the
    top level is empty enough.

    Returns
    -------
    (DensityMatrix, ModelParams, CutoffReport)
        The state, the parameters actually used (possibly with a larger
        ``n_max``) and the cutoff report for that state.
    """
    opts = opts or SolverOptions()
    while True:
        o = opts
        if opts.seed_state is not None and opts.seed_state.dims != params.dims:
            o = replace(opts, seed_state=None)
        rho = solve_inverse_power(build_liouvillian(params), o, params.dims)
        report = check_cutoff(rho, cutoff_threshold)
        rho.info["top_population"] = report.top_population
        rho.info["n_max"] = params.n_max
        if report.passed or not auto_cutoff or params.n_max + n_max_step > n_max_limit:
            return rho, params, report
        log.info("P(n_max=%d) = %.2e, raising cutoff", params.n_max, report.top_population)
        params = params.replace(n_max=params.n_max + n_max_step)
