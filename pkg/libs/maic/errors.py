"""Exceptions raised by the maicfeas library.

Everything derives from MaicError so callers (the command line, the report
pipeline) can catch library failures without swallowing programming errors.
"""

from typing import Any, Dict, Optional, Sequence


class MaicError(Exception):
    """Base class for all library errors."""

    def context(self) -> Dict[str, Any]:
        """Structured details for logs and reports."""
        return {}


class DataFormatError(MaicError):
    """An input file could not be parsed: empty, missing cells, bad numbers."""

    def __init__(self, message: str, path: Optional[str] = None,
                 row: Optional[int] = None, column: Optional[str] = None):
        location = []
        if path:
            location.append(str(path))
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column '{column}'")
        full = f"{message} ({', '.join(location)})" if location else message
        super().__init__(full)
        self.path = path
        self.row = row
        self.column = column

    def context(self) -> Dict[str, Any]:
        return {"path": self.path, "row": self.row, "column": self.column}


class AlignmentError(MaicError):
    """AD and IPD covariate names do not match."""

    def __init__(self, missing_in_ipd: Sequence[str] = (), missing_in_ad: Sequence[str] = ()):
        parts = []
        if missing_in_ipd:
            parts.append(f"in AD but not in IPD: {', '.join(missing_in_ipd)}")
        if missing_in_ad:
            parts.append(f"in IPD but not in AD: {', '.join(missing_in_ad)}")
        super().__init__("covariate mismatch; " + "; ".join(parts))
        self.missing_in_ipd = list(missing_in_ipd)
        self.missing_in_ad = list(missing_in_ad)

    def context(self) -> Dict[str, Any]:
        return {"missing_in_ipd": self.missing_in_ipd, "missing_in_ad": self.missing_in_ad}


class DimensionError(MaicError):
    """Array shapes do not agree."""


class InvalidArgumentError(MaicError):
    """An argument is outside its allowed range."""


class ConstantCovariateError(MaicError):
    """One or more covariates have zero sample standard deviation."""

    def __init__(self, names: Sequence[str]):
        super().__init__(
            "constant covariate(s) cannot be standardized, drop them first: " + ", ".join(names))
        self.names = list(names)

    def context(self) -> Dict[str, Any]:
        return {"covariates": self.names}


class SimplexError(MaicError):
    """The simplex engine hit its pivot cap or an impossible unbounded objective."""


class FitRefusedError(MaicError):
    """MAIC weights were requested for data whose AD is not interior to the IPD hull."""

    def __init__(self, verdict):
        status = verdict.status.value
        if status == "Infeasible":
            reason = ("the AD means lie outside the convex hull of the IPD; no weighting of "
                      "the IPD can reproduce them")
        else:
            reason = ("the AD means lie on the boundary of the IPD convex hull; matching would "
                      "need zero weights, which exponential weights cannot reach")
        super().__init__(f"MAIC fit refused ({status}): {reason}")
        self.verdict = verdict

    def context(self) -> Dict[str, Any]:
        return {"status": self.verdict.status.value, "exit_code": self.verdict.exit_code}


class ConvergenceError(MaicError):
    """The Newton solver stopped before meeting its tolerances."""

    def __init__(self, message: str, iterations: int, gradient_norm: float,
                 moment_residual: float):
        super().__init__(
            f"{message} after {iterations} iterations "
            f"(gradient {gradient_norm:.3e}, moment residual {moment_residual:.3e})")
        self.iterations = iterations
        self.gradient_norm = gradient_norm
        self.moment_residual = moment_residual

    def context(self) -> Dict[str, Any]:
        return {"iterations": self.iterations, "gradient_norm": self.gradient_norm,
                "moment_residual": self.moment_residual}


class SingularCovarianceError(MaicError):
    """The IPD covariance matrix is (numerically) singular."""

    def __init__(self, covariates: Sequence[str], condition: float):
        super().__init__(
            f"IPD covariance is singular (condition estimate {condition:.3e}); "
            f"near-collinear covariates: {', '.join(covariates)}")
        self.covariates = list(covariates)
        self.condition = condition

    def context(self) -> Dict[str, Any]:
        return {"covariates": self.covariates, "condition": self.condition}


class PlotError(MaicError):
    """A plot could not be produced or written."""


class HullInfeasibleError(MaicError):
    """A step that needs a feasible weighting was run on AD outside the IPD hull."""

    def __init__(self, verdict, step: str):
        super().__init__(
            f"{step} needs AD means inside the IPD convex hull, but they lie outside "
            f"(separation margin {verdict.separation_margin})")
        self.verdict = verdict
        self.step = step

    def context(self) -> Dict[str, Any]:
        return {"status": self.verdict.status.value, "step": self.step}
