"""Numerical options shared by the library and the command line."""

from dataclasses import dataclass
from typing import Optional, Sequence

FEASIBILITY_TOL = 1e-8
PROBE_EPSILON = 1e-6
PIVOT_TOL = 1e-11
GRADIENT_TOL = 1e-9
MOMENT_TOL = 1e-6
MAX_ITERATIONS = 500
MAX_CONDITION = 1e12
EIGEN_FLOOR = 1e-10
PC_RANGE_MARGIN = 1e-7


@dataclass(frozen=True)
class HullOptions:
    """Options for the convex hull membership check.

    Tolerances apply in standardized coordinates.
    """
    feasibility_tol: float = FEASIBILITY_TOL
    probe_epsilon: float = PROBE_EPSILON
    pivot_tol: float = PIVOT_TOL
    max_pivots: Optional[int] = None


@dataclass(frozen=True)
class SolverOptions:
    """Options for the MAIC Newton solver."""
    gradient_tol: float = GRADIENT_TOL
    moment_tol: float = MOMENT_TOL
    max_iterations: int = MAX_ITERATIONS
    armijo: float = 1e-4
    shrink: float = 0.5
    min_step: float = 1e-16
    max_condition: float = MAX_CONDITION
    beta_start: Optional[Sequence[float]] = None
    hull: HullOptions = HullOptions()
