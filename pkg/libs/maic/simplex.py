"""Dense-tableau simplex method for standard-form systems {A v = b, v >= 0}.

Phase 1 adds one artificial variable per row and minimizes their sum; the
system is feasible iff that minimum is (numerically) zero. On infeasibility
the phase-1 duals give a Farkas certificate u with u'A <= 0 and u'b > 0.
Phase 2 maximizes a linear objective starting from the phase-1 tableau, so
one phase-1 solve can serve many objectives.

Pivoting follows Bland's rule (lowest-index entering column, lowest-index
leaving variable among ratio ties), so runs are deterministic and terminate.
"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from libs.maic.config import FEASIBILITY_TOL, PIVOT_TOL
from libs.maic.errors import DimensionError, SimplexError
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()


@dataclass(frozen=True)
class PhaseOneResult:
    feasible: bool
    infeasibility: float
    solution: np.ndarray
    certificate: Optional[np.ndarray]
    pivots: int


@dataclass(frozen=True)
class LpResult:
    status: str
    solution: np.ndarray
    objective: float
    pivots: int


class SimplexTableau:
    """Simplex tableau for {A v = b, v >= 0} with A of shape m x n."""

    def __init__(self, A, b, feasibility_tol: float = FEASIBILITY_TOL,
                 pivot_tol: float = PIVOT_TOL, max_pivots: Optional[int] = None):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        m, n = A.shape
        if b.shape[0] != m:
            raise DimensionError(f"constraint matrix has {m} rows but right-hand side has {b.shape[0]}")

        # rows with negative rhs are negated so the artificial basis starts feasible
        self.row_sign = np.where(b < 0, -1.0, 1.0)
        self.n_original = n
        self.n_rows = m
        self.feasibility_tol = feasibility_tol
        self.pivot_tol = pivot_tol
        self.max_pivots = max_pivots or 50 * (n + m) + 1000

        self.table = np.zeros((m + 1, n + m + 1))
        self.table[:m, :n] = A * self.row_sign[:, None]
        self.table[:m, n:n + m] = np.eye(m)
        self.table[:m, -1] = b * self.row_sign
        self.basis: List[int] = list(range(n, n + m))
        self.pivots = 0
        self.phase_one_done = False

    def copy(self) -> "SimplexTableau":
        other = object.__new__(SimplexTableau)
        other.__dict__.update(self.__dict__)
        other.table = self.table.copy()
        other.basis = list(self.basis)
        return other

    def _set_costs(self, costs: np.ndarray) -> None:
        """Write the reduced-cost row for minimizing costs'x over the current basis."""
        row = np.zeros(self.table.shape[1])
        row[:-1] = costs
        for i, j in enumerate(self.basis):
            if costs[j] != 0.0:
                row -= costs[j] * self.table[i]
        self.table[-1] = row

    def _pivot(self, r: int, j: int) -> None:
        pivot_row = self.table[r] / self.table[r, j]
        column = self.table[:, j].copy()
        column[r] = 0.0
        self.table -= np.outer(column, pivot_row)
        self.table[r] = pivot_row
        self.basis[r] = j
        self.pivots += 1
        if self.pivots > self.max_pivots:
            raise SimplexError(f"pivot cap of {self.max_pivots} exceeded")

    def _run(self, n_allowed: int) -> str:
        """Pivot until optimal or unbounded; only the first n_allowed columns may enter."""
        tol = self.pivot_tol
        while True:
            reduced = self.table[-1, :n_allowed]
            entering = np.flatnonzero(reduced < -tol)
            if entering.size == 0:
                return "optimal"
            j = int(entering[0])

            column = self.table[:-1, j]
            rhs = self.table[:-1, -1]
            rows = np.flatnonzero(column > tol)
            if rows.size == 0:
                return "unbounded"
            ratios = rhs[rows] / column[rows]
            best = ratios.min()
            ties = rows[ratios <= best + tol * (1.0 + abs(best))]
            r = int(min(ties, key=lambda i: self.basis[i]))
            self._pivot(r, j)

    def _solution(self) -> np.ndarray:
        x = np.zeros(self.n_original)
        for i, j in enumerate(self.basis):
            if j < self.n_original:
                x[j] = self.table[i, -1]
        return np.maximum(x, 0.0)

    def phase_one(self) -> PhaseOneResult:
        """Decide feasibility; on success the tableau holds a basic feasible solution."""
        n, m = self.n_original, self.n_rows
        costs = np.concatenate([np.zeros(n), np.ones(m)])
        self._set_costs(costs)
        self._run(n + m)
        infeasibility = max(-self.table[-1, -1], 0.0)

        if infeasibility > self.feasibility_tol:
            # reduced cost of artificial i is 1 - u_i
            duals = 1.0 - self.table[-1, n:n + m]
            certificate = duals * self.row_sign
            metrics.log_event("phase_one_infeasible", {
                "infeasibility": infeasibility, "pivots": self.pivots}, LogLevel.DEBUG)
            return PhaseOneResult(False, infeasibility, self._solution(), certificate, self.pivots)

        self._drive_out_artificials()
        self.phase_one_done = True
        metrics.log_event("phase_one_feasible", {
            "infeasibility": infeasibility, "pivots": self.pivots,
            "rows_kept": len(self.basis)}, LogLevel.DEBUG)
        return PhaseOneResult(True, infeasibility, self._solution(), None, self.pivots)

    def _drive_out_artificials(self) -> None:
        """Pivot zero-level artificials out of the basis; drop rows that are redundant."""
        n = self.n_original
        r = 0
        while r < len(self.basis):
            if self.basis[r] < n:
                r += 1
                continue
            candidates = np.flatnonzero(np.abs(self.table[r, :n]) > self.pivot_tol)
            if candidates.size:
                self._pivot(r, int(candidates[0]))
                r += 1
            else:
                self.table = np.delete(self.table, r, axis=0)
                del self.basis[r]

    def maximize(self, objective) -> LpResult:
        """Maximize objective'v over the feasible set, from a copy of the phase-1 tableau."""
        if not self.phase_one_done:
            raise SimplexError("phase one must succeed before optimizing")
        objective = np.asarray(objective, dtype=float).ravel()
        if objective.shape[0] != self.n_original:
            raise DimensionError(
                f"objective has {objective.shape[0]} entries for {self.n_original} variables")

        work = self.copy()
        start = work.pivots
        costs = np.concatenate([-objective, np.zeros(work.table.shape[1] - 1 - work.n_original)])
        work._set_costs(costs)
        status = work._run(work.n_original)
        if status == "unbounded":
            raise SimplexError("objective is unbounded on a set that should be a bounded polytope")
        x = work._solution()
        return LpResult(status, x, float(objective @ x), work.pivots - start)


def feasibility(A, b, feasibility_tol: float = FEASIBILITY_TOL,
                pivot_tol: float = PIVOT_TOL,
                max_pivots: Optional[int] = None) -> PhaseOneResult:
    """One-shot phase-1 feasibility test of {A v = b, v >= 0}."""
    return SimplexTableau(A, b, feasibility_tol, pivot_tol, max_pivots).phase_one()
