"""Quasi-periodic solutions of nonlinear Schrödinger equations on T^d.

Construction of solution branches by a space-time Fourier Newton scheme,
resonance-geometry certificates, direct split-step evolution for
cross-validation, and eigenfunction scaling on tori of revolution.
"""

__version__ = "0.1.0"

from .lattice import AnalyticWeight, MultiIndex, TruncationBox
from .nonlinearity import FourierField, TailSpec
from .resonance import SeedSolution
from .qp_solver import NewtonSettings, SolutionBranch, solve

__all__ = [
    "AnalyticWeight",
    "FourierField",
    "MultiIndex",
    "NewtonSettings",
    "SeedSolution",
    "SolutionBranch",
    "TailSpec",
    "TruncationBox",
    "solve",
    "__version__",
]
