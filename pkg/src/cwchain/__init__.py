"""Equilibrium profiles, free energies and isotherms of chains of coupled
Curie-Weiss systems, with continuum predictions for the plateau wiggles."""

__version__ = "0.1.0"

from .core import ChainModel, CouplingWindow, FieldSpec, Profile, kappa, make_window
from .errors import ConvergenceError, CWChainError, PrecisionError, ValidationError
from .kernels import available_backends, default_backend
from .precision import working_precision
from .solver import (
    Ensemble,
    SolveResult,
    SolverConfig,
    solve,
    solve_canonical,
    solve_fixed_field,
    solve_grand_canonical,
    solve_rfcw,
    sweep_isotherm,
)

__all__ = [
    "ChainModel",
    "CouplingWindow",
    "FieldSpec",
    "Profile",
    "kappa",
    "make_window",
    "CWChainError",
    "ConvergenceError",
    "PrecisionError",
    "ValidationError",
    "available_backends",
    "default_backend",
    "working_precision",
    "Ensemble",
    "SolveResult",
    "SolverConfig",
    "solve",
    "solve_canonical",
    "solve_fixed_field",
    "solve_grand_canonical",
    "solve_rfcw",
    "sweep_isotherm",
]
