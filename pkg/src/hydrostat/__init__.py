"""Simulator and verification harness for rotating hydrostatic flow in a
closed box: full eddy viscosity in momentum, horizontal-only eddy
diffusivity in temperature, optional vertical regularization of strength
eps, wind-stress and side-heating boundary data, and an inequality-monitor
ledger for the associated well-posedness estimates.
"""

from .mesh import (BoundaryKind, DIRICHLET0, GridSpec, NEUMANN0,
                   NonFiniteFieldError, robin)
from .fields import PhysParams, State
from .dynamics import Forcing, SourceForcing
from .stepper import NumericalFailure, StepConfig, StepReport, integrate, step
from .pressure import PoissonSolver, project
from .diagnostics import EnergyLedger
from .experiments import RunConfig, run_scenario

__version__ = "0.1.0"

__all__ = [
    "BoundaryKind", "DIRICHLET0", "NEUMANN0", "robin", "GridSpec",
    "NonFiniteFieldError", "PhysParams", "State", "Forcing", "SourceForcing",
    "NumericalFailure", "StepConfig", "StepReport", "integrate", "step",
    "PoissonSolver", "project", "EnergyLedger", "RunConfig", "run_scenario",
    "__version__",
]
