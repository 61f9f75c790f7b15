"""Micro-macro reduced basis solver for the linear radiative transfer equation."""

from .angular import AngularQuadrature, lebedev, nonneg_reduced_quadrature
from .errors import (ConfigurationError, MMRBError, ModelError, NumericalError,
                     QuadratureError, SchemeError, SolverError)
from .fom import ProblemDefinition, fom_solve, fom_step, stable_dt
from .mesh import BoundaryCondition, assemble_operators, build_mesh
from .rom import ReducedBasis, ReducedModel, project_operators, rom_solve, rom_step

__version__ = "0.1.0"

__all__ = [
    "AngularQuadrature", "BoundaryCondition", "ConfigurationError", "MMRBError", "ModelError",
    "NumericalError", "ProblemDefinition", "QuadratureError", "ReducedBasis", "ReducedModel",
    "SchemeError", "SolverError", "assemble_operators", "build_mesh", "fom_solve", "fom_step",
    "lebedev", "nonneg_reduced_quadrature", "project_operators", "rom_solve", "rom_step",
    "stable_dt",
]
