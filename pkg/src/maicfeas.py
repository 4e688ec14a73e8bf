"""
maicfeas command line

Subcommands map onto the library one to one:

    check       convex hull membership (exit 0 Interior, 3 Boundary, 2 Infeasible)
    pca         AD location in IPD principal components, optional SVG dot plots
    t2          Hotelling's T^2 (fixed AD or two-sample, optional resampling)
    fit         MAIC weights, ESS and the steepest-ascent diagnostic
    altweights  alternative feasible weights from projected LP objectives
    report      the whole workflow with report.json, summary.txt, CSVs and SVGs

Every flag falls back to an environment variable MAICFEAS_<FLAG> (upper
case, dashes as underscores); flags given on the command line win. Input,
usage and numerical errors exit with 1 and a one-line diagnostic on
standard error.
"""

import argparse
import os
import sys
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

from libs.maic import __version__
from libs.maic.alt_weights import DistanceMetric, alternative_weights, distance_weight_correlation
from libs.maic.config import HullOptions, SolverOptions
from libs.maic.errors import FitRefusedError, MaicError
from libs.maic.hotelling import (
    HotellingVariant,
    hotelling_fixed_ad,
    hotelling_resampled,
    hotelling_two_sample,
    mahalanobis_location,
)
from libs.maic.hull_check import check_in_hull
from libs.maic.maic_fit import fit_maic, steepest_ascent_diagnostic, weighted_outcome_mean
from libs.maic.data_model import load_outcome
from libs.maic.pca_check import (
    marginal_range_check,
    pca_locate,
    render_marginal_dotplot,
    render_pc_dotplot,
)
from libs.report.common import EXIT_ERROR, EXIT_INTERIOR, canonical_json, exit_code_for
from libs.report.pipeline import (
    SUMMARY_FILE,
    PipelineOptions,
    load_inputs,
    run_pipeline,
    write_basis,
    write_weights,
)
from libs.report.plots import render_scatter_with_weights
from libs.metrics.shared_metrics import metrics

metrics.init()

ENV_PREFIX = "MAICFEAS_"
TRUE_VALUES = {"1", "true", "yes", "on"}
VARIANTS = {"fixed": HotellingVariant.FIXED_AD, "two-sample": HotellingVariant.TWO_SAMPLE}


class UsageError(Exception):
    """Bad command-line usage (argparse would otherwise exit with 2)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _env(name: str, default: Optional[str] = None) -> Optional[str]:
    return os.environ.get(ENV_PREFIX + name, default)


def _env_flag(name: str) -> bool:
    return str(_env(name, "")).strip().lower() in TRUE_VALUES


def _env_list(name: str) -> List[str]:
    value = _env(name)
    return value.split() if value else []


def _add_input_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--ipd", default=_env("IPD"), help="IPD file: header row, one row per patient")
    parser.add_argument("--ad", default=_env("AD"), help="AD file: name,value rows; optional n_ad")
    parser.add_argument("--delimiter", default=_env("DELIMITER", ","), help="field delimiter (default ,)")
    parser.add_argument("--variance", nargs="*", default=_env_list("VARIANCE"), metavar="NAME=VALUE",
                        help="also match the AD variance of a covariate")
    parser.add_argument("--feasibility-tol", type=float,
                        default=_env("FEASIBILITY_TOL", str(HullOptions.feasibility_tol)),
                        help="hull feasibility tolerance in standardized units")
    parser.add_argument("--max-iterations", type=int,
                        default=_env("MAX_ITERATIONS", str(SolverOptions.max_iterations)),
                        help="Newton iteration cap for the MAIC fit")
    parser.add_argument("--log-level", default=_env("LOG_LEVEL", "INFO"),
                        choices=["DEBUG", "INFO", "WARN", "WARNING", "ERROR"], type=str.upper)
    parser.add_argument("--metrics-out", default=_env("METRICS_PATH"),
                        help="append buffered run metrics to this JSON-lines file")


def build_parser() -> argparse.ArgumentParser:
    """Command-line parser; environment defaults are read when this is called."""
    parser = _Parser(prog="maicfeas",
                     description="Numerical feasibility checks for matching-adjusted indirect comparison.")
    parser.add_argument("--version", action="version", version=f"maicfeas {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check", help="is the AD inside the convex hull of the IPD?")
    _add_input_arguments(check)

    pca = sub.add_parser("pca", help="locate the AD in the IPD principal components")
    _add_input_arguments(pca)
    pca.add_argument("--plot", default=_env("PLOT"), help="write the PC dot plot SVG here")
    pca.add_argument("--marginal-plot", default=_env("MARGINAL_PLOT"),
                     help="write the per-covariate dot plot SVG here")

    t2 = sub.add_parser("t2", help="Hotelling's T^2 of IPD mean against AD means")
    _add_input_arguments(t2)
    t2.add_argument("--variant", choices=sorted(VARIANTS), default=_env("VARIANT", "fixed"))
    t2.add_argument("--resample", type=int, default=_env("RESAMPLE"),
                    help="bootstrap draws for a resampled p-value (>= 100)")
    t2.add_argument("--seed", type=int, default=_env("SEED", "0"))

    fit = sub.add_parser("fit", help="fit MAIC weights (Interior AD only)")
    _add_input_arguments(fit)
    fit.add_argument("--weights-out", default=_env("WEIGHTS_OUT"), help="patient_id,weight CSV")
    fit.add_argument("--plot", default=_env("PLOT"), help="weight scatter SVG (two covariates only)")
    fit.add_argument("--outcome", default=_env("OUTCOME"), help="outcome file for the weighted mean")

    alt = sub.add_parser("altweights", help="alternative feasible weights")
    _add_input_arguments(alt)
    alt.add_argument("--metric", choices=[m.value for m in DistanceMetric],
                     default=_env("METRIC", DistanceMetric.EUCLIDEAN.value))
    alt.add_argument("--out", default=_env("OUT"), help="patient_id,weight CSV of the blended weights")
    alt.add_argument("--dump-basis", default=_env("DUMP_BASIS"),
                     help="write the n x n basis matrix as CSV (large for big n)")
    alt.add_argument("--workers", type=int, default=_env("WORKERS"),
                     help="threads for the per-patient LP solves")

    report = sub.add_parser("report", help="run the whole workflow and write a report")
    _add_input_arguments(report)
    report.add_argument("--outcome", default=_env("OUTCOME"))
    report.add_argument("--resample", type=int, default=_env("RESAMPLE"))
    report.add_argument("--seed", type=int, default=_env("SEED", "0"))
    report.add_argument("--altweights", action="store_true", default=_env_flag("ALTWEIGHTS"))
    report.add_argument("--metric", choices=[m.value for m in DistanceMetric],
                        default=_env("METRIC", DistanceMetric.EUCLIDEAN.value))
    report.add_argument("--dump-basis", action="store_true", default=_env_flag("DUMP_BASIS"))
    report.add_argument("--workers", type=int, default=_env("WORKERS"))
    report.add_argument("--out", default=_env("OUT"), help="output directory")
    return parser


def _emit(payload: Dict[str, Any]) -> None:
    sys.stdout.write(canonical_json(payload) + "\n")


def _options(args):
    hull = HullOptions(feasibility_tol=args.feasibility_tol)
    return hull, SolverOptions(max_iterations=args.max_iterations, hull=hull)


def _load(args):
    if not args.ipd or not args.ad:
        raise UsageError("--ipd and --ad are required (or MAICFEAS_IPD / MAICFEAS_AD)")
    return load_inputs(args.ipd, args.ad, args.delimiter, args.variance)


def _run_check(args) -> int:
    ipd, ad = _load(args)
    hull, _ = _options(args)
    verdict = check_in_hull(ipd, ad, hull)
    _emit(verdict.to_dict())
    return exit_code_for(verdict.status)


def _run_pca(args) -> int:
    ipd, ad = _load(args)
    projection = pca_locate(ipd, ad)
    payload = projection.to_dict()
    payload["marginal_outside"] = marginal_range_check(ipd, ad)
    if args.plot:
        render_pc_dotplot(projection, args.plot)
    if args.marginal_plot:
        render_marginal_dotplot(ipd, ad, args.marginal_plot)
    _emit(payload)
    return EXIT_INTERIOR


def _run_t2(args) -> int:
    ipd, ad = _load(args)
    variant = VARIANTS[args.variant]
    if args.resample:
        result = hotelling_resampled(ipd, ad, variant, args.resample, args.seed)
    elif variant == HotellingVariant.FIXED_AD:
        result = hotelling_fixed_ad(ipd, ad)
    else:
        result = hotelling_two_sample(ipd, ad)
    payload = result.to_dict()
    payload["mahalanobis"] = mahalanobis_location(ipd, ad).to_dict()
    _emit(payload)
    return EXIT_INTERIOR


def _run_fit(args) -> int:
    ipd, ad = _load(args)
    _, solver = _options(args)
    try:
        fit = fit_maic(ipd, ad, solver)
    except FitRefusedError as e:
        _emit({"feasibility": e.verdict.to_dict(), "fit": None})
        sys.stderr.write(f"maicfeas: {e}\n")
        return exit_code_for(e.verdict.status)
    payload = fit.to_dict()
    payload["steepest_ascent"] = steepest_ascent_diagnostic(fit, ipd, ad).to_dict()
    payload["distance_weight_correlation"] = distance_weight_correlation(fit.weights, ipd, ad)
    if args.outcome:
        outcome = load_outcome(args.outcome, ipd, args.delimiter)
        payload["outcome"] = {"label": outcome.label,
                              "maic_mean": weighted_outcome_mean(outcome, fit.weights)}
    if args.weights_out:
        write_weights(args.weights_out, fit.weights)
    if args.plot:
        render_scatter_with_weights(ipd, ad, fit, args.plot)
    _emit(payload)
    return EXIT_INTERIOR


def _run_altweights(args) -> int:
    ipd, ad = _load(args)
    hull, _ = _options(args)
    verdict = check_in_hull(ipd, ad, hull)
    if not verdict.feasible:
        _emit({"feasibility": verdict.to_dict(), "altweights": None})
        sys.stderr.write("maicfeas: AD means lie outside the IPD convex hull; "
                         "no feasible weights exist\n")
        return exit_code_for(verdict.status)
    result = alternative_weights(ipd, ad, DistanceMetric(args.metric), hull, args.workers)
    payload = result.to_dict()
    payload["distance_weight_correlation"] = distance_weight_correlation(result.final, ipd, ad)
    if args.out:
        write_weights(args.out, result.final)
    if args.dump_basis:
        write_basis(args.dump_basis, result.basis.columns)
    _emit(payload)
    return EXIT_INTERIOR


def _run_report(args) -> int:
    if not args.ipd or not args.ad:
        raise UsageError("--ipd and --ad are required (or MAICFEAS_IPD / MAICFEAS_AD)")
    hull, solver = _options(args)
    options = PipelineOptions(delimiter=args.delimiter, outcome_path=args.outcome,
                              variance=tuple(args.variance), resample=args.resample,
                              seed=args.seed, altweights=args.altweights,
                              metric=DistanceMetric(args.metric), out_dir=args.out,
                              dump_basis=args.dump_basis, max_workers=args.workers)
    options = replace(options, hull=hull, solver=solver)
    report = run_pipeline(args.ipd, args.ad, options)
    if args.out:
        with open(os.path.join(args.out, SUMMARY_FILE), encoding="utf-8") as f:
            sys.stdout.write(f.read())
    else:
        sys.stdout.write(report.to_json() + "\n")
    errors = ([report.error] if report.error is not None else []) + report.stage_errors
    for error in errors:
        sys.stderr.write(f"maicfeas: {error['stage']}: {error['error_type']}: "
                         f"{error['message']}\n")
    return report.exit_code


COMMANDS = {
    "check": _run_check,
    "pca": _run_pca,
    "t2": _run_t2,
    "fit": _run_fit,
    "altweights": _run_altweights,
    "report": _run_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"maicfeas: usage error: {e}\n")
        return EXIT_ERROR

    metrics.configure(args.log_level, args.metrics_out)

    try:
        with metrics.command(args.command) as result:
            result["exit_code"] = COMMANDS[args.command](args)
    except UsageError as e:
        sys.stderr.write(f"maicfeas: usage error: {e}\n")
        return EXIT_ERROR
    except (MaicError, OSError) as e:
        sys.stderr.write(f"maicfeas: error: {e}\n")
        return EXIT_ERROR
    return result["exit_code"]


if __name__ == "__main__":
    raise SystemExit(main())
