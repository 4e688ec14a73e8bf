"""MAIC weights by exponential tilting.

With covariates centred at the AD means, z_i = y_i - xbar, the moment
condition sum_i z_i exp(z_i'beta) = 0 is the first-order condition of the
convex objective Q(beta) = sum_i exp(z_i'beta). Q/n is minimized by a
safeguarded Newton method with backtracking line search, in standardized
units. A solution exists iff xbar is interior to the IPD hull, so every fit
is gated by check_in_hull first.

Hessian and gradient are plain numpy matrix products over the patient axis;
for a fixed BLAS thread count they are bit-stable run to run.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import linalg, stats

from libs.maic.config import SolverOptions
from libs.maic.data_model import (
    AdVector,
    IpdMatrix,
    OutcomeVector,
    StandardizationParams,
    check_alignment,
)
from libs.maic.errors import (
    ConvergenceError,
    DimensionError,
    FitRefusedError,
    InvalidArgumentError,
)
from libs.maic.hull_check import FeasibilityVerdict, HullStatus, check_in_hull
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

# Line-search slack for objective values that only differ by rounding
ARMIJO_SLACK = 1e-14
CIRCLE_ANGLES = 360


@dataclass(frozen=True)
class MaicFit:
    """Fitted MAIC weights.

    beta is in raw covariate units so that log(raw_weights) = (y_i - xbar)'beta;
    weights are rescaled to sum to n. moment_residual is measured in
    standardized units.
    """
    beta: np.ndarray
    beta_standardized: np.ndarray
    weights: np.ndarray
    raw_weights: np.ndarray
    scores: np.ndarray
    ess: float
    ess_fraction: float
    moment_residual: float
    gradient_norm: float
    iterations: int
    converged: bool
    center: np.ndarray
    covariate_names: Tuple[str, ...]
    verdict: Optional[FeasibilityVerdict] = None

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def to_dict(self, include_weights: bool = True) -> dict:
        out = {
            "beta": dict(zip(self.covariate_names, self.beta.tolist())),
            "ess": self.ess,
            "ess_fraction": self.ess_fraction,
            "moment_residual": self.moment_residual,
            "gradient_norm": self.gradient_norm,
            "iterations": self.iterations,
            "converged": self.converged,
        }
        if include_weights:
            out["weights"] = self.weights.tolist()
        return out


@dataclass(frozen=True)
class SteepestAscentRecord:
    """Monotonicity of MAIC weights along beta / ||beta||."""
    uniform: bool
    direction: Optional[np.ndarray]
    projections: Optional[np.ndarray]
    rank_correlation: Optional[float]
    max_weight_index: int
    circle_alignment_deg: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "uniform": self.uniform,
            "direction": None if self.direction is None else self.direction.tolist(),
            "rank_correlation": self.rank_correlation,
            "max_weight_index": self.max_weight_index,
            "circle_alignment_deg": self.circle_alignment_deg,
        }


def objective(Z: np.ndarray, beta: np.ndarray) -> float:
    """Q(beta) / n for centred covariates Z (p x n)."""
    with np.errstate(over="ignore"):
        return float(np.mean(np.exp(Z.T @ beta)))


def gradient(Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Gradient of Q / n."""
    with np.errstate(over="ignore"):
        e = np.exp(Z.T @ beta)
    return Z @ e / Z.shape[1]


def hessian(Z: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Hessian of Q / n: sum_i z_i z_i' exp(z_i'beta) / n."""
    with np.errstate(over="ignore"):
        e = np.exp(Z.T @ beta)
    return (Z * e) @ Z.T / Z.shape[1]


def _newton_direction(H: np.ndarray, g: np.ndarray, max_condition: float) -> Tuple[np.ndarray, bool]:
    if not np.all(np.isfinite(H)):
        return -g, False
    if np.linalg.cond(H) > max_condition:
        return -g, False
    try:
        return -linalg.solve(H, g, assume_a="pos"), True
    except (linalg.LinAlgError, ValueError):
        return -g, False


def minimize_tilting_objective(Z: np.ndarray, beta0: np.ndarray,
                               options: SolverOptions) -> Tuple[np.ndarray, int, float, float, bool]:
    """
    Minimize Q/n by Newton steps with Armijo backtracking.

    Falls back to steepest descent when the Hessian is ill-conditioned.

    Returns:
        (beta, iterations, gradient inf-norm, moment residual, converged)
    """
    beta = np.array(beta0, dtype=float)
    f = objective(Z, beta)
    iterations = 0
    grad_norm = np.inf
    residual = np.inf

    while True:
        g = gradient(Z, beta)
        grad_norm = float(np.max(np.abs(g)))
        # Z w / sum w with w = exp(Z'beta) is the gradient over Q/n
        residual = grad_norm / f if f > 0 else np.inf
        if grad_norm <= options.gradient_tol and residual <= options.moment_tol:
            return beta, iterations, grad_norm, residual, True
        if iterations >= options.max_iterations:
            return beta, iterations, grad_norm, residual, False

        d, newton = _newton_direction(hessian(Z, beta), g, options.max_condition)
        slope = float(g @ d)
        if not slope < 0:
            d, newton = -g, False
            slope = -float(g @ g)

        t = 1.0
        slack = ARMIJO_SLACK * max(1.0, abs(f))
        while True:
            trial = beta + t * d
            f_trial = objective(Z, trial)
            if np.isfinite(f_trial) and f_trial <= f + options.armijo * t * slope + slack:
                break
            t *= options.shrink
            if t < options.min_step:
                return beta, iterations, grad_norm, residual, False

        beta, f = trial, f_trial
        iterations += 1
        metrics.log_event("newton_step", {"iteration": iterations, "objective": f,
                                          "step": t, "newton": newton,
                                          "gradient_norm": grad_norm}, LogLevel.DEBUG)


def effective_sample_size(weights) -> float:
    """
    (sum w)^2 / sum w^2 of non-negative weights.

    Raises:
        InvalidArgumentError: negative weights or all weights zero
    """
    weights = np.asarray(weights, dtype=float)
    if weights.ndim != 1 or weights.size == 0:
        raise InvalidArgumentError("weights must be a non-empty vector")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise InvalidArgumentError("weights must be finite and non-negative")
    total = weights.sum()
    if total <= 0:
        raise InvalidArgumentError("at least one weight must be positive")
    # scale first so large weights cannot overflow the squares
    scaled = weights / weights.max()
    return float(scaled.sum() ** 2 / np.sum(scaled ** 2))


def weighted_outcome_mean(outcome: OutcomeVector, weights) -> float:
    """sum r_i w_i / sum w_i, the MAIC-adjusted mean outcome."""
    weights = np.asarray(weights, dtype=float)
    if weights.shape != outcome.values.shape:
        raise DimensionError(f"{weights.shape[0]} weights for {outcome.n} outcomes")
    total = weights.sum()
    if not total > 0:
        raise InvalidArgumentError("weights must have a positive total")
    return float(outcome.values @ weights / total)


def fit_maic(ipd: IpdMatrix, ad: AdVector, options: SolverOptions = SolverOptions(),
             verdict: Optional[FeasibilityVerdict] = None) -> MaicFit:
    """
    Solve the MAIC moment condition for beta and return the patient weights.

    The hull check runs first (or a verdict for the same data is reused);
    anything but Interior is refused.

    Args:
        ipd: the IPD
        ad: AD means aligned to the IPD
        options: solver tolerances; beta_start is in raw covariate units
        verdict: a check_in_hull result for exactly this ipd/ad

    Returns:
        MaicFit

    Raises:
        FitRefusedError: AD on the boundary of or outside the IPD hull
        ConvergenceError: tolerances not met within max_iterations
    """
    check_alignment(ipd, ad)
    if verdict is None:
        verdict = check_in_hull(ipd, ad, options.hull)
    if verdict.status != HullStatus.INTERIOR:
        metrics.log_event("fit_refused", {"status": verdict.status.value}, LogLevel.WARN)
        raise FitRefusedError(verdict)

    params = StandardizationParams.from_ipd(ipd)
    Z = (ipd.values - ad.values[:, None]) / params.sds[:, None]

    if options.beta_start is None:
        beta0 = np.zeros(ipd.p)
    else:
        beta0 = np.asarray(options.beta_start, dtype=float)
        if beta0.shape != (ipd.p,):
            raise DimensionError(f"beta_start has shape {beta0.shape}, expected ({ipd.p},)")
        beta0 = beta0 * params.sds

    beta_std, iterations, grad_norm, residual, converged = minimize_tilting_objective(Z, beta0, options)
    if not converged:
        metrics.log_event("fit_not_converged", {"iterations": iterations,
                                                "gradient_norm": grad_norm,
                                                "moment_residual": residual}, LogLevel.WARN)
        raise ConvergenceError("MAIC solver did not converge", iterations, grad_norm, residual)

    scores = Z.T @ beta_std
    shifted = np.exp(scores - scores.max())
    weights = ipd.n * shifted / shifted.sum()
    ess = effective_sample_size(weights)

    fit = MaicFit(beta=beta_std / params.sds, beta_standardized=beta_std, weights=weights,
                  raw_weights=np.exp(scores), scores=scores, ess=ess, ess_fraction=ess / ipd.n,
                  moment_residual=residual, gradient_norm=grad_norm, iterations=iterations,
                  converged=True, center=np.array(ad.values), covariate_names=ipd.covariate_names,
                  verdict=verdict)
    metrics.set_gauge("ess_fraction", fit.ess_fraction)
    metrics.log_event("maic_fitted", {"iterations": iterations, "ess": ess,
                                      "moment_residual": residual}, LogLevel.DEBUG)
    return fit


def relative_weight(fit: MaicFit, points) -> np.ndarray:
    """Unnormalized fitted weight exp((y - xbar)'beta) at the columns of points (p x m)."""
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    with np.errstate(over="ignore"):
        return np.exp((points - fit.center[:, None]).T @ fit.beta)


def _circle_alignment(fit: MaicFit, radius: float) -> float:
    """Angle (degrees) between beta and the highest-weight point on a circle around xbar."""
    angles = np.arange(CIRCLE_ANGLES) * (2 * np.pi / CIRCLE_ANGLES)
    circle = fit.center[:, None] + radius * np.vstack([np.cos(angles), np.sin(angles)])
    best = angles[int(np.argmax(relative_weight(fit, circle)))]
    target = np.arctan2(fit.beta[1], fit.beta[0])
    diff = (best - target + np.pi) % (2 * np.pi) - np.pi
    return float(abs(np.degrees(diff)))


def steepest_ascent_diagnostic(fit: MaicFit, ipd: IpdMatrix, ad: AdVector) -> SteepestAscentRecord:
    """
    Describe how the weights grow along the steepest-ascent direction beta/||beta||.

    log w_i equals (y_i - xbar)'beta up to a common constant, so the Spearman
    correlation between each patient's projection on the direction and its
    log-weight is 1. A zero beta gives a flagged uniform-weights record.
    """
    check_alignment(ipd, ad)
    if not fit.converged:
        raise InvalidArgumentError("steepest-ascent diagnostic needs a converged fit")
    if fit.n != ipd.n:
        raise DimensionError(f"fit has {fit.n} weights but IPD has {ipd.n} patients")

    max_index = int(np.argmax(fit.weights))
    norm = float(np.linalg.norm(fit.beta))
    if norm <= np.finfo(float).tiny or np.max(np.abs(fit.scores)) == 0.0:
        return SteepestAscentRecord(True, None, None, None, max_index)

    direction = fit.beta / norm
    projections = fit.scores / norm
    rho = stats.spearmanr(projections, np.log(fit.weights)).correlation

    alignment = None
    if ipd.p == 2:
        radius = float(np.median(np.linalg.norm(ipd.values - ad.values[:, None], axis=0)))
        alignment = _circle_alignment(fit, radius if radius > 0 else 1.0)

    return SteepestAscentRecord(False, direction, projections, float(rho), max_index, alignment)
