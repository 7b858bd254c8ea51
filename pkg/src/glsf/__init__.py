"""Simulation lab for the non-isothermal Ginzburg-Landau superfluidity system."""
from .params import (
    BoundaryData,
    Grid2D,
    ParameterError,
    PhysicalParams,
    SolverError,
    build_boundary_data,
    derive_params,
    zero_boundary_data,
)
from .functionals import State, StructureError

__version__ = "0.1.0"

__all__ = [
    "BoundaryData",
    "Grid2D",
    "ParameterError",
    "PhysicalParams",
    "SolverError",
    "State",
    "StructureError",
    "build_boundary_data",
    "derive_params",
    "zero_boundary_data",
]
