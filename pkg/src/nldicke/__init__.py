"""Dissipative Dicke model with a non-linear atom-photon coupling."""

__version__ = "0.1.0"

from .model import DensityMatrix, ModelParams, build_hamiltonian, build_liouvillian  # noqa: E402
from .steady_state import SolverOptions, steady_state  # noqa: E402

__all__ = ["__version__", "ModelParams", "DensityMatrix", "build_hamiltonian",
           "build_liouvillian", "SolverOptions", "steady_state"]
