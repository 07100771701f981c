"""Finite element solver for the Navier-Stokes-Cahn-Hilliard system with
degenerate mobility on structured triangulations of the unit square."""

from nsch.mesh import Mesh, build_structured_mesh, axis_nodes
from nsch.potentials import PhysParams
from nsch.schemes import Params, State, StepReport, Stepper, NonConvergenceError
from nsch.linsys import SolverFailure

__all__ = [
    "Mesh",
    "build_structured_mesh",
    "axis_nodes",
    "PhysParams",
    "Params",
    "State",
    "StepReport",
    "Stepper",
    "NonConvergenceError",
    "SolverFailure",
]

__version__ = "0.1.0"
