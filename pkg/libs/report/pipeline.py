"""
Report pipeline

Runs the feasibility workflow in data-dependency order and collects one
CheckReport:

    load -> check -> pca -> t2 -> fit -> altweights

t2 is skipped when the AD is outside the IPD hull, fit runs only for an
Interior AD, altweights only when requested and the AD is not outside the
hull. A load or check error is the report's `error` and stops the run
(exit code 1). Later stages only add diagnostics: their errors go into
`stage_errors`, the remaining stages still run and the exit code stays the
hull verdict's.

The report body is canonical JSON. Everything time dependent lives under
`run_info`, which the determinism hash leaves out, so two runs on the same
inputs and seed give the same hash.
"""

from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from libs.maic import __version__
from libs.maic.alt_weights import (
    AltWeightSet,
    DistanceMetric,
    alternative_weights,
    distance_weight_correlation,
)
from libs.maic.config import HullOptions, SolverOptions
from libs.maic.data_model import (
    AdVector,
    IpdMatrix,
    OutcomeVector,
    augment_variance_columns,
    load_ad,
    load_ipd,
    load_outcome,
    parse_variance_targets,
)
from libs.maic.hotelling import (
    HotellingResult,
    HotellingVariant,
    MahalanobisLocation,
    hotelling_fixed_ad,
    hotelling_resampled,
    hotelling_two_sample,
    mahalanobis_location,
)
from libs.maic.hull_check import FeasibilityVerdict, HullStatus, check_in_hull
from libs.maic.maic_fit import (
    MaicFit,
    SteepestAscentRecord,
    fit_maic,
    steepest_ascent_diagnostic,
    weighted_outcome_mean,
)
from libs.maic.pca_check import (
    PcaProjection,
    marginal_range_check,
    pca_locate,
    render_marginal_dotplot,
    render_pc_dotplot,
)
from libs.report.common import (
    HASH_KEY,
    RUN_INFO_KEY,
    canonical_json,
    create_error_section,
    determinism_hash,
    exit_code_for,
    file_digest,
    to_jsonable,
)
from libs.report.plots import render_scatter_with_weights
from libs.metrics.shared_metrics import metrics
from libs.metrics.run_metrics import LogLevel

metrics.init()

REPORT_FILE = "report.json"
SUMMARY_FILE = "summary.txt"
WEIGHTS_FILE = "weights.csv"
ALT_WEIGHTS_FILE = "alt_weights.csv"
ALT_BASIS_FILE = "alt_basis.csv"
PC_PLOT_FILE = "pc_dotplot.svg"
MARGINAL_PLOT_FILE = "marginal_dotplot.svg"
SCATTER_FILE = "scatter_weights.svg"


@dataclass(frozen=True)
class PipelineOptions:
    delimiter: str = ","
    outcome_path: Optional[str] = None
    variance: Tuple[str, ...] = ()
    resample: Optional[int] = None
    seed: int = 0
    altweights: bool = False
    metric: DistanceMetric = DistanceMetric.EUCLIDEAN
    out_dir: Optional[str] = None
    dump_basis: bool = False
    max_workers: Optional[int] = None
    hull: HullOptions = HullOptions()
    solver: SolverOptions = SolverOptions()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "delimiter": self.delimiter,
            "variance": list(self.variance),
            "resample": self.resample,
            "seed": self.seed,
            "altweights": self.altweights,
            "metric": self.metric.value,
            "dump_basis": self.dump_basis,
            "feasibility_tol": self.hull.feasibility_tol,
            "probe_epsilon": self.hull.probe_epsilon,
            "gradient_tol": self.solver.gradient_tol,
            "moment_tol": self.solver.moment_tol,
            "max_iterations": self.solver.max_iterations,
        }


@dataclass
class CheckReport:
    """Everything one pipeline run produced; sections are None when a stage did not run."""
    provenance: Dict[str, Any]
    feasibility: Optional[FeasibilityVerdict] = None
    pca: Optional[PcaProjection] = None
    marginal_outside: Optional[List[str]] = None
    hotelling: List[HotellingResult] = field(default_factory=list)
    mahalanobis: Optional[MahalanobisLocation] = None
    fit: Optional[MaicFit] = None
    steepest_ascent: Optional[SteepestAscentRecord] = None
    fit_distance_correlation: Optional[float] = None
    altweights: Optional[AltWeightSet] = None
    alt_distance_correlation: Optional[float] = None
    outcome: Optional[Dict[str, Any]] = None
    error: Optional[Dict[str, Any]] = None
    stage_errors: List[Dict[str, Any]] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    run_info: Dict[str, Any] = field(default_factory=dict)

    @property
    def exit_code(self) -> int:
        status = None if self.feasibility is None else self.feasibility.status
        return exit_code_for(status, self.error is not None)

    def body(self) -> Dict[str, Any]:
        fit = None
        if self.fit is not None:
            fit = self.fit.to_dict()
            fit["distance_weight_correlation"] = self.fit_distance_correlation
            if self.steepest_ascent is not None:
                fit["steepest_ascent"] = self.steepest_ascent.to_dict()
        alt = None
        if self.altweights is not None:
            alt = self.altweights.to_dict()
            alt["distance_weight_correlation"] = self.alt_distance_correlation
        pca = None
        if self.pca is not None:
            pca = self.pca.to_dict()
            pca["marginal_outside"] = self.marginal_outside
        elif self.marginal_outside is not None:
            pca = {"marginal_outside": self.marginal_outside}
        return to_jsonable({
            "provenance": self.provenance,
            "feasibility": None if self.feasibility is None else self.feasibility.to_dict(),
            "pca": pca,
            "hotelling": [h.to_dict() for h in self.hotelling] or None,
            "mahalanobis": None if self.mahalanobis is None else self.mahalanobis.to_dict(),
            "fit": fit,
            "altweights": alt,
            "outcome": self.outcome,
            "error": self.error,
            "stage_errors": self.stage_errors or None,
            "outputs": sorted(self.outputs),
            "exit_code": self.exit_code,
        })

    def to_dict(self) -> Dict[str, Any]:
        report = self.body()
        report[HASH_KEY] = determinism_hash(report)
        report[RUN_INFO_KEY] = to_jsonable(self.run_info)
        return report

    def to_json(self) -> str:
        return canonical_json(self.to_dict())


def load_inputs(ipd_path, ad_path, delimiter: str = ",",
                variance: Sequence[str] = ()) -> Tuple[IpdMatrix, AdVector]:
    """Read IPD and AD files and append variance-matching columns for `name=value` targets."""
    ipd = load_ipd(ipd_path, delimiter)
    ad = load_ad(ad_path, ipd, delimiter)
    targets = parse_variance_targets(variance)
    if targets:
        ipd, ad = augment_variance_columns(ipd, ad, targets)
    return ipd, ad


def _provenance(ipd_path, ad_path, options: PipelineOptions) -> Dict[str, Any]:
    inputs = {"ipd": {"name": Path(ipd_path).name}, "ad": {"name": Path(ad_path).name}}
    if options.outcome_path:
        inputs["outcome"] = {"name": Path(options.outcome_path).name}
    for entry, path in zip(inputs.values(), (ipd_path, ad_path, options.outcome_path)):
        try:
            entry["sha256"] = file_digest(path)
        except OSError:
            entry["sha256"] = None
    return {"tool": "maicfeas", "version": __version__, "seed": options.seed,
            "inputs": inputs, "options": options.to_dict()}


def write_weights(path, weights: np.ndarray) -> None:
    """patient_id,weight CSV with 1-based patient ids in IPD order."""
    weights = np.asarray(weights)
    frame = pd.DataFrame({"patient_id": np.arange(1, weights.shape[0] + 1), "weight": weights})
    frame.to_csv(path, index=False, float_format="%.17g")


def write_basis(path, columns: np.ndarray) -> None:
    """n x n basis matrix, one row per patient, one column per LP solve, no header."""
    pd.DataFrame(columns).to_csv(path, index=False, header=False, float_format="%.17g")


def _outcome_section(outcome: OutcomeVector, fit: Optional[MaicFit],
                     alt: Optional[AltWeightSet]) -> Dict[str, Any]:
    section = {"label": outcome.label, "unweighted_mean": float(np.mean(outcome.values))}
    if fit is not None:
        section["maic_mean"] = weighted_outcome_mean(outcome, fit.weights)
    if alt is not None:
        section["alternative_mean"] = weighted_outcome_mean(outcome, alt.final)
    return section


class _Stage:
    """
    Times a stage and records its error.

    A fatal stage's error becomes the report's error section; any other
    stage's error is appended to stage_errors and leaves the exit code alone.
    """

    def __init__(self, report: CheckReport, name: str, fatal: bool = False):
        self.report = report
        self.name = name
        self.fatal = fatal
        self._timer = metrics.time_operation(f"stage_{name}")

    def __enter__(self):
        self._timer.__enter__()
        return self

    def __exit__(self, exc_type, exc, tb):
        self._timer.__exit__(exc_type, exc, tb)
        if exc is None:
            return False
        if not isinstance(exc, Exception):
            return False
        metrics.log_error(exc, {"stage": self.name}, operation=f"stage_{self.name}")
        section = create_error_section(self.name, exc)
        if self.fatal:
            self.report.error = section
        else:
            self.report.stage_errors.append(section)
        return True


def run_pipeline(ipd_path, ad_path, options: PipelineOptions = PipelineOptions()) -> CheckReport:
    """
    Run check, PCA, Hotelling, fit and (optionally) alternative weights.

    Args:
        ipd_path: IPD file
        ad_path: AD file
        options: pipeline options; out_dir enables file outputs

    Returns:
        CheckReport: exit_code gives 0 Interior, 3 Boundary, 2 Infeasible,
        1 when loading or the hull check failed
    """
    started = datetime.now(timezone.utc)
    report = CheckReport(provenance=_provenance(ipd_path, ad_path, options))
    out_dir = Path(options.out_dir) if options.out_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def output(name: str) -> Optional[Path]:
        if out_dir is None:
            return None
        report.outputs.append(name)
        return out_dir / name

    outcome = None
    with _Stage(report, "load", fatal=True):
        ipd, ad = load_inputs(ipd_path, ad_path, options.delimiter, options.variance)
        if options.outcome_path:
            outcome = load_outcome(options.outcome_path, ipd, options.delimiter)
        metrics.log_event("inputs_loaded", {"n": ipd.n, "p": ipd.p,
                                            "covariates": list(ipd.covariate_names)})

    if report.error is None:
        with _Stage(report, "check", fatal=True):
            report.feasibility = check_in_hull(ipd, ad, options.hull)
            metrics.log_event("feasibility", {"status": report.feasibility.status.value})

    if report.error is None:
        # marginal ranges survive constant covariates, the PCA does not
        with _Stage(report, "pca"):
            report.marginal_outside = marginal_range_check(ipd, ad)
            if out_dir is not None:
                render_marginal_dotplot(ipd, ad, output(MARGINAL_PLOT_FILE))
            report.pca = pca_locate(ipd, ad)
            if out_dir is not None:
                render_pc_dotplot(report.pca, output(PC_PLOT_FILE))

    feasible = report.error is None and report.feasibility.feasible
    if feasible:
        with _Stage(report, "t2"):
            report.hotelling.append(hotelling_fixed_ad(ipd, ad))
            if ad.n_ad is not None:
                report.hotelling.append(hotelling_two_sample(ipd, ad))
            if options.resample:
                report.hotelling.append(hotelling_resampled(
                    ipd, ad, HotellingVariant.FIXED_AD, options.resample, options.seed))
            report.mahalanobis = mahalanobis_location(ipd, ad)

    if feasible and report.feasibility.status == HullStatus.INTERIOR:
        with _Stage(report, "fit"):
            report.fit = fit_maic(ipd, ad, options.solver, verdict=report.feasibility)
            report.steepest_ascent = steepest_ascent_diagnostic(report.fit, ipd, ad)
            report.fit_distance_correlation = distance_weight_correlation(report.fit.weights, ipd, ad)
            if out_dir is not None:
                write_weights(output(WEIGHTS_FILE), report.fit.weights)
                if ipd.p == 2:
                    render_scatter_with_weights(ipd, ad, report.fit, output(SCATTER_FILE))

    if feasible and options.altweights:
        with _Stage(report, "altweights"):
            report.altweights = alternative_weights(ipd, ad, options.metric, options.hull,
                                                    options.max_workers)
            report.alt_distance_correlation = distance_weight_correlation(
                report.altweights.final, ipd, ad)
            if out_dir is not None:
                write_weights(output(ALT_WEIGHTS_FILE), report.altweights.final)
                if options.dump_basis:
                    write_basis(output(ALT_BASIS_FILE), report.altweights.basis.columns)

    if report.error is None and outcome is not None:
        with _Stage(report, "outcome"):
            report.outcome = _outcome_section(outcome, report.fit, report.altweights)

    finished = datetime.now(timezone.utc)
    report.run_info = {"started_at": started.isoformat(), "finished_at": finished.isoformat(),
                       "duration_seconds": (finished - started).total_seconds(),
                       "session_id": metrics.session_id}

    if out_dir is not None:
        output(REPORT_FILE)
        output(SUMMARY_FILE)
        body = report.to_dict()
        write_report(body, out_dir)

    failed_stages = [e["stage"] for e in ([report.error] if report.error else []) + report.stage_errors]
    metrics.log_event("pipeline_finished", {"exit_code": report.exit_code,
                                            "failed_stages": failed_stages},
                      LogLevel.WARN if failed_stages else LogLevel.INFO)
    return report


def write_report(report: Dict[str, Any], out_dir) -> None:
    """Write report.json and summary.txt into out_dir."""
    out_dir = Path(out_dir)
    (out_dir / REPORT_FILE).write_text(canonical_json(report) + "\n", encoding="utf-8")
    (out_dir / SUMMARY_FILE).write_text(render_summary(report), encoding="utf-8")


def _fmt(value, digits: int = 4) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.{digits}g}"
    return str(value)


def render_summary(report: Dict[str, Any]) -> str:
    """Human-readable text derived from the report dict."""
    lines = [f"maicfeas {report['provenance']['version']}",
             f"exit code: {report['exit_code']}"]

    feasibility = report.get("feasibility")
    if feasibility:
        lines.append(f"feasibility: {feasibility['status']}")
        if feasibility["status"] == "Infeasible":
            lines.append("  the AD means lie outside the convex hull of the IPD; "
                         "MAIC cannot be conducted")
            lines.append(f"  separation margin: {_fmt(feasibility['separation_margin'])}")
        elif feasibility["status"] == "Boundary":
            lines.append("  the AD means lie on the hull boundary ("
                         + ", ".join(feasibility["boundary_directions"]) + " leave the hull); "
                         "MAIC weights cannot be fitted")

    pca = report.get("pca")
    if pca:
        if "ad_outside" in pca:
            outside = ", ".join(f"PC{k}" for k in pca["ad_outside"]) or "none"
            lines.append(f"PCs with AD outside the IPD range: {outside}")
        if pca.get("marginal_outside"):
            lines.append("covariates with AD outside the IPD range: "
                         + ", ".join(pca["marginal_outside"]))
        for warning in pca.get("warnings", []):
            lines.append(f"  warning: {warning}")

    for test in report.get("hotelling") or []:
        lines.append(f"Hotelling T^2 ({test['variant']}, {test['method']}): "
                     f"T2 = {_fmt(test['statistic'])}, F = {_fmt(test['f_statistic'])} "
                     f"on ({test['df1']}, {test['df2']}) df")
        lines.append(f"  {test['interpretation']}")

    fit = report.get("fit")
    if fit:
        lines.append(f"MAIC fit: ESS = {_fmt(fit['ess'])} ({_fmt(100 * fit['ess_fraction'], 3)}% of n), "
                     f"{fit['iterations']} iterations, moment residual {_fmt(fit['moment_residual'])}")
        lines.append("  beta: " + ", ".join(f"{k} = {_fmt(v)}" for k, v in fit["beta"].items()))

    alt = report.get("altweights")
    if alt:
        lines.append(f"alternative weights ({alt['distance_metric']}): residual {_fmt(alt['residual'])}, "
                     f"weight/distance rank correlation {_fmt(alt['distance_weight_correlation'])}")
        if alt["flags"]:
            lines.append("  flags: " + ", ".join(alt["flags"]))

    outcome = report.get("outcome")
    if outcome:
        parts = [f"unweighted {_fmt(outcome['unweighted_mean'])}"]
        if "maic_mean" in outcome:
            parts.append(f"MAIC {_fmt(outcome['maic_mean'])}")
        if "alternative_mean" in outcome:
            parts.append(f"alternative {_fmt(outcome['alternative_mean'])}")
        lines.append(f"outcome {outcome['label']}: " + ", ".join(parts))

    error = report.get("error")
    if error:
        lines.append(f"stopped at stage '{error['stage']}': {error['error_type']}: {error['message']}")
    for stage_error in report.get("stage_errors") or []:
        lines.append(f"stage '{stage_error['stage']}' failed: {stage_error['error_type']}: "
                     f"{stage_error['message']}")

    lines.append(f"determinism hash: {report.get(HASH_KEY)}")
    return "\n".join(lines) + "\n"
