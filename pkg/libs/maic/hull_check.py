"""Convex hull membership of the AD means in the IPD cloud.

The AD vector xbar lies in H(Y) = {Y w : w >= 0, sum(w) = 1} iff the linear
system {Y v = xbar, 1'v = 1, v >= 0} has a solution. That is decided exactly
by phase-1 simplex; no hull polytope is ever built.

Work happens in standardized coordinates (IPD means and sample sds, with
constant covariates scaled by 1), so the tolerances are scale-free.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from libs.maic.config import HullOptions
from libs.maic.data_model import AdVector, IpdMatrix, StandardizationParams, check_alignment
from libs.maic.simplex import feasibility
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

EXIT_FEASIBLE = 0
EXIT_INFEASIBLE = 2


class HullStatus(Enum):
    INTERIOR = "Interior"
    BOUNDARY = "Boundary"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class FeasibilityVerdict:
    """Outcome of the hull membership check.

    witness is present iff the AD is in the hull; certificate (in raw
    covariate units) iff it is not.
    """
    status: HullStatus
    witness: Optional[np.ndarray] = None
    certificate: Optional[np.ndarray] = None
    separation_margin: Optional[float] = None
    infeasibility: float = 0.0
    pivots: int = 0
    boundary_directions: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def feasible(self) -> bool:
        return self.status != HullStatus.INFEASIBLE

    @property
    def exit_code(self) -> int:
        return EXIT_FEASIBLE if self.feasible else EXIT_INFEASIBLE

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "exit_code": self.exit_code,
            "witness": None if self.witness is None else self.witness.tolist(),
            "witness_support": None if self.witness is None
            else np.flatnonzero(self.witness > 0).tolist(),
            "certificate": None if self.certificate is None else self.certificate.tolist(),
            "separation_margin": self.separation_margin,
            "infeasibility": self.infeasibility,
            "pivots": self.pivots,
            "boundary_directions": list(self.boundary_directions),
        }


def hull_coordinates(ipd: IpdMatrix, ad: AdVector):
    check_alignment(ipd, ad)
    params = StandardizationParams.from_ipd(ipd, allow_constant=True)
    return params.apply(ipd.values), params.apply(ad.values), params


def hull_constraints(Z: np.ndarray, x: np.ndarray):
    A = np.vstack([Z, np.ones((1, Z.shape[1]))])
    b = np.concatenate([x, [1.0]])
    return A, b


def _probe(Z: np.ndarray, x: np.ndarray, names, epsilon: float,
           options: HullOptions) -> List[str]:
    """Axis directions x +/- epsilon * e_j that leave the hull."""
    failed = []
    for j in range(Z.shape[0]):
        for sign in (1.0, -1.0):
            shifted = x.copy()
            shifted[j] += sign * epsilon
            A, b = hull_constraints(Z, shifted)
            result = feasibility(A, b, options.feasibility_tol, options.pivot_tol, options.max_pivots)
            if not result.feasible:
                failed.append(f"{'+' if sign > 0 else '-'}{names[j]}")
    return failed


def interiority_probe(ipd: IpdMatrix, ad: AdVector, epsilon: Optional[float] = None,
                      options: HullOptions = HullOptions()) -> HullStatus:
    """
    Classify a feasible AD as Interior or Boundary.

    The AD is Interior iff all 2p axis perturbations xbar +/- epsilon * e_j
    (standardized coordinates) remain inside the hull. Meant to be called
    after check_in_hull reported the AD feasible.
    """
    Z, x, _ = hull_coordinates(ipd, ad)
    eps = options.probe_epsilon if epsilon is None else epsilon
    failed = _probe(Z, x, ipd.covariate_names, eps, options)
    return HullStatus.BOUNDARY if failed else HullStatus.INTERIOR


def check_in_hull(ipd: IpdMatrix, ad: AdVector,
                  options: HullOptions = HullOptions()) -> FeasibilityVerdict:
    """
    Decide whether the AD means lie in the convex hull of the IPD columns.

    Args:
        ipd: the IPD
        ad: AD means aligned to the IPD
        options: tolerances and probe size

    Returns:
        FeasibilityVerdict: Interior / Boundary with a witness w (w >= 0,
        sum 1, Y w = xbar), or Infeasible with a separating direction c
        (c'xbar > max_i c'y_i).
    """
    Z, x, params = hull_coordinates(ipd, ad)
    A, b = hull_constraints(Z, x)
    phase = feasibility(A, b, options.feasibility_tol, options.pivot_tol, options.max_pivots)

    if not phase.feasible:
        direction = phase.certificate[:ipd.p]
        certificate = direction / params.sds
        margin = float(certificate @ ad.values - np.max(certificate @ ipd.values))
        verdict = FeasibilityVerdict(HullStatus.INFEASIBLE, certificate=certificate,
                                     separation_margin=margin,
                                     infeasibility=phase.infeasibility, pivots=phase.pivots)
        metrics.log_event("hull_checked", {"status": verdict.status.value,
                                           "infeasibility": phase.infeasibility,
                                           "pivots": phase.pivots}, LogLevel.DEBUG)
        return verdict

    witness = phase.solution
    if np.max(np.abs(Z.mean(axis=1) - x)) <= options.feasibility_tol:
        witness = np.full(ipd.n, 1.0 / ipd.n)

    failed = _probe(Z, x, ipd.covariate_names, options.probe_epsilon, options)
    status = HullStatus.BOUNDARY if failed else HullStatus.INTERIOR
    verdict = FeasibilityVerdict(status, witness=witness, infeasibility=phase.infeasibility,
                                 pivots=phase.pivots, boundary_directions=tuple(failed))
    metrics.log_event("hull_checked", {"status": status.value, "pivots": phase.pivots,
                                       "boundary_directions": failed}, LogLevel.DEBUG)
    return verdict


def witness_residual(ipd: IpdMatrix, ad: AdVector, weights: np.ndarray) -> float:
    """||Y w - xbar||_inf in standardized coordinates."""
    Z, x, _ = hull_coordinates(ipd, ad)
    return float(np.max(np.abs(Z @ weights - x)))
