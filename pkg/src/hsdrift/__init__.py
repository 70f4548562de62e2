"""Numerics for Hele-Shaw type free boundaries with drift: solvers, flows and regularity diagnostics."""
__version__ = "0.1.0"

from .reports import DiagnosticsReport, read_report  # noqa: E402
from .field_core import Cone, Grid, GridField, PositiveSet, FrontGraph  # noqa: E402
from .elliptic import BoundaryPiece, DirichletProblem, solve_dirichlet  # noqa: E402
from .streamline import DriftField, rotation_drift, constant_drift, zero_drift  # noqa: E402
from .evolution import EvolutionRun, FixedBoundary, FlowSpec, simulate  # noqa: E402
from .cone_harmonics import beta_theta, cone_table  # noqa: E402

__all__ = ["__version__", "DiagnosticsReport", "read_report", "Cone", "Grid", "GridField", "PositiveSet",
           "FrontGraph", "BoundaryPiece", "DirichletProblem", "solve_dirichlet", "DriftField",
           "rotation_drift", "constant_drift", "zero_drift", "EvolutionRun", "FixedBoundary", "FlowSpec",
           "simulate", "beta_theta", "cone_table"]
