"""Unfitted (cut-cell) mixed finite elements for 2D Darcy flow.

H(div) fluxes with discontinuous pressures on structured background meshes,
weakly imposed boundary conditions and bulk or face ghost-penalty
stabilisation.  See ``cutdarcy.verify.run`` for a single solve and
``cutdarcy.cli`` for the experiment driver.
"""
from .errors import (ConfigError, ConstraintInapplicable, CutDarcyError, DegenerateCell,
                     InsufficientData, InvalidDimensions, MissingBoundaryData, OrphanCutCell,
                     Singular, SingularMap, SingularMass)
from .forms import AssembledSystem, Discretization, ProblemConfig, assemble_system
from .geometry import LevelSetDomain, clip_cell
from .mesh import Tag, build_aggregates, build_background, classify_cells
from .spaces import FESpace
from .verify import RunParams, builtin_cases, convergence_rates, run

__version__ = "0.1.0"
