"""Alternative feasible weight sets that are not monotone in any direction.

MAIC weights always grow along beta, so patients far from the AD in that
direction get the largest weights. Another feasible weighting is built from
basic feasible solutions of {Y v = xbar, 1'v = 1, v >= 0}: column k of the
basis maximizes c'v for c the k-th column of the projector P onto the
orthogonal complement of the row space of Y (centred at xbar). Since P v = v
for feasible v, column k pushes weight onto patient k as far as the
constraints allow. The columns are then blended with weights inversely
proportional to each patient's squared distance from xbar.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy import linalg, stats

from libs.maic.config import EIGEN_FLOOR, FEASIBILITY_TOL, HullOptions
from libs.maic.data_model import AdVector, IpdMatrix, StandardizationParams, check_alignment
from libs.maic.errors import DimensionError, HullInfeasibleError
from libs.maic.hotelling import checked_covariance
from libs.maic.hull_check import check_in_hull, hull_constraints, hull_coordinates
from libs.maic.simplex import SimplexTableau
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

DISTANCE_FLOOR = 1e-12
ZERO_COLUMN_TOL = 1e-12


class DistanceMetric(Enum):
    EUCLIDEAN = "euclidean"
    MAHALANOBIS = "mahalanobis"


@dataclass(frozen=True)
class Projection:
    """P = I - Z'(ZZ')^+ Z with the rank actually used for the pseudo-inverse."""
    matrix: np.ndarray
    rank: int
    rank_deficient: bool


@dataclass(frozen=True)
class WeightBasis:
    """n x n matrix whose columns are feasible weight vectors (each sums to 1)."""
    columns: np.ndarray
    zero_columns: Tuple[int, ...] = ()
    rank_deficient: bool = False
    pivots: int = 0

    @property
    def n(self) -> int:
        return self.columns.shape[1]

    def support_sizes(self) -> List[int]:
        return np.count_nonzero(self.columns > 0, axis=0).tolist()


@dataclass(frozen=True)
class AltWeightSet:
    basis: WeightBasis
    blend: np.ndarray
    final: np.ndarray
    distance_metric: DistanceMetric
    residual: float
    flags: Tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self, include_basis: bool = False) -> dict:
        out = {
            "distance_metric": self.distance_metric.value,
            "final": self.final.tolist(),
            "blend": self.blend.tolist(),
            "residual": self.residual,
            "support_sizes": self.basis.support_sizes(),
            "flags": list(self.flags),
        }
        if include_basis:
            out["basis"] = self.basis.columns.tolist()
        return out


def projection_matrix(ipd: IpdMatrix, center: Optional[np.ndarray] = None) -> Projection:
    """
    Projector onto the orthogonal complement of the row space of Y.

    Rows are scaled by the IPD sds (constant covariates by 1) and, if center
    is given, shifted by it first. Row scaling leaves P unchanged. The Gram
    matrix ZZ' is inverted through its eigendecomposition, dropping
    eigenvalues below 1e-10 times the largest; a dropped eigenvalue marks
    the projection rank deficient.
    """
    params = StandardizationParams.from_ipd(ipd, allow_constant=True)
    Z = ipd.values if center is None else ipd.values - np.asarray(center, dtype=float)[:, None]
    Z = Z / params.sds[:, None]

    eigenvalues, vectors = linalg.eigh(Z @ Z.T)
    largest = eigenvalues[-1] if eigenvalues.size else 0.0
    if largest <= 0:
        return Projection(np.eye(ipd.n), 0, True)

    keep = eigenvalues > EIGEN_FLOOR * largest
    rank = int(np.count_nonzero(keep))
    # Z'(ZZ')^+ Z = U U' with U = Z' V L^(-1/2) over the kept eigenpairs
    U = Z.T @ vectors[:, keep] / np.sqrt(eigenvalues[keep])
    P = np.eye(ipd.n) - U @ U.T
    P = (P + P.T) / 2.0
    return Projection(P, rank, rank < ipd.p)


def _solve_column(tableau: SimplexTableau, objective: np.ndarray):
    result = tableau.maximize(objective)
    return result.solution, result.pivots


def alt_weight_basis(ipd: IpdMatrix, ad: AdVector, options: HullOptions = HullOptions(),
                     max_workers: Optional[int] = None) -> WeightBasis:
    """
    One basic feasible solution per patient, maximizing the patient's column of P.

    A single phase-1 tableau is shared by all n phase-2 solves; each solve
    works on its own copy, so columns can run on a thread pool and still come
    out identical. Columns of P that are numerically zero give no direction;
    they are filled with the phase-1 solution and listed in zero_columns.

    Raises:
        HullInfeasibleError: the AD lies outside the IPD hull
    """
    check_alignment(ipd, ad)
    Z, x, _ = hull_coordinates(ipd, ad)
    A, b = hull_constraints(Z, x)
    tableau = SimplexTableau(A, b, options.feasibility_tol, options.pivot_tol, options.max_pivots)
    phase = tableau.phase_one()
    if not phase.feasible:
        raise HullInfeasibleError(check_in_hull(ipd, ad, options), "alternative weights")

    projection = projection_matrix(ipd, center=ad.values)
    P = projection.matrix
    norms = np.max(np.abs(P), axis=0)
    zero = tuple(int(k) for k in np.flatnonzero(norms <= ZERO_COLUMN_TOL))
    active = [k for k in range(ipd.n) if k not in zero]

    columns = np.empty((ipd.n, ipd.n))
    pivots = 0
    if max_workers and max_workers > 1 and len(active) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            solved = list(pool.map(lambda k: _solve_column(tableau, P[:, k]), active))
    else:
        solved = [_solve_column(tableau, P[:, k]) for k in active]
    for k, (solution, used) in zip(active, solved):
        columns[:, k] = solution
        pivots += used
    for k in zero:
        columns[:, k] = phase.solution

    if zero:
        metrics.log_event("projection_zero_columns", {"columns": list(zero)}, LogLevel.WARN)
    metrics.log_event("alt_basis_built", {"n": ipd.n, "pivots": pivots,
                                          "rank": projection.rank}, LogLevel.DEBUG)
    return WeightBasis(columns, zero, projection.rank_deficient, pivots)


def _squared_distances(ipd: IpdMatrix, ad: AdVector, metric: DistanceMetric) -> np.ndarray:
    diff = ipd.values - ad.values[:, None]
    if metric == DistanceMetric.EUCLIDEAN:
        return np.sum(diff ** 2, axis=0)
    cov = checked_covariance(ipd)
    return np.einsum("ji,ji->i", diff, linalg.solve(cov, diff, assume_a="pos"))


def blend_by_distance(basis: WeightBasis, ipd: IpdMatrix, ad: AdVector,
                      metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> AltWeightSet:
    """
    Blend the basis columns with d_k proportional to 1 / dist^2(y_k, xbar).

    A patient sitting on xbar would get an infinite share; its squared
    distance is floored at 1e-12 and the patient is flagged.
    """
    check_alignment(ipd, ad)
    if basis.columns.shape != (ipd.n, ipd.n):
        raise DimensionError(f"basis has shape {basis.columns.shape}, expected ({ipd.n}, {ipd.n})")

    dist2 = _squared_distances(ipd, ad, metric)
    floored = np.flatnonzero(dist2 < DISTANCE_FLOOR)
    inverse = 1.0 / np.maximum(dist2, DISTANCE_FLOOR)
    blend = inverse / inverse.sum()
    final = basis.columns @ blend

    flags = [f"distance_floor:{int(k)}" for k in floored]
    flags += [f"zero_projection_column:{k}" for k in basis.zero_columns]
    if basis.rank_deficient:
        flags.append("rank_deficient_projection")

    Z, x, _ = hull_coordinates(ipd, ad)
    residual = float(max(np.max(np.abs(Z @ final - x)), abs(final.sum() - 1.0)))
    if residual > FEASIBILITY_TOL or np.any(final < 0):
        metrics.log_event("alt_weights_infeasible_blend", {"residual": residual}, LogLevel.WARN)
        flags.append("blend_residual_above_tolerance")
    if floored.size:
        metrics.log_event("distance_floor_applied", {"patients": floored.tolist()}, LogLevel.WARN)

    return AltWeightSet(basis, blend, final, metric, residual, tuple(flags))


def alternative_weights(ipd: IpdMatrix, ad: AdVector,
                        metric: DistanceMetric = DistanceMetric.EUCLIDEAN,
                        options: HullOptions = HullOptions(),
                        max_workers: Optional[int] = None) -> AltWeightSet:
    with metrics.time_operation("alternative_weights", dimensions={"n": ipd.n, "p": ipd.p}):
        basis = alt_weight_basis(ipd, ad, options, max_workers)
        return blend_by_distance(basis, ipd, ad, metric)


def distance_weight_correlation(weights, ipd: IpdMatrix, ad: AdVector) -> Optional[float]:
    """
    Spearman correlation between weights and standardized distance to xbar.

    Negative values mean patients near the AD get the larger weights. Returns
    None when either side is constant.
    """
    check_alignment(ipd, ad)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (ipd.n,):
        raise DimensionError(f"{weights.shape[0]} weights for {ipd.n} patients")
    params = StandardizationParams.from_ipd(ipd, allow_constant=True)
    distance = np.linalg.norm((ipd.values - ad.values[:, None]) / params.sds[:, None], axis=0)
    if np.ptp(weights) == 0 or np.ptp(distance) == 0:
        return None
    return float(stats.spearmanr(weights, distance).correlation)
