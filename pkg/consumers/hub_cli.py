"""
hub_cli.py

Command-line tool for forecast hub operators. Reads submission files,
then validates, scores, ensembles, fits or grids them.

    python -m consumers.hub_cli validate data/example_model1_mixture.csv
    python -m consumers.hub_cli score data/example_model1_mixture.csv data/example_truth.csv --rule crps --out scores.csv
    python -m consumers.hub_cli ensemble data/example_model1_mixture.csv data/example_model2_mixture.csv \
        --weights pmp-cdf --truth data/example_truth.csv --out ensemble.csv
    python -m consumers.hub_cli fit bins.csv --components 3 --out fitted.csv --report fit_report.csv
    python -m consumers.hub_cli grid data/example_model1_mixture.csv --location US --target "1 wk ahead" --unit cases --out grid.csv

Exit codes: 0 success, 1 unreadable file or bad structure, 2 invalid content.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import argparse
import pathlib
import sys
from typing import Optional, Sequence

# Import external packages
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

# Import functions from local modules
from mixline.errors import (
    EnsembleError,
    MixlineError,
    SubmissionStructureError,
    SubmissionValidationError,
)
from mixline.ensemble import (
    bin_average,
    crps_min_weights_from_forecasts,
    em_weights_from_likelihoods,
    equal_weights,
    likelihood_matrix,
    ma_ensemble,
    pmp_weights_from_likelihoods,
    quantile_average,
)
from mixline.fitting import FitConfig
from mixline.formats import (
    ForecastKey,
    SubmissionKind,
    SubmissionTable,
    convert,
    format_real,
    parse_submission,
    parse_truth,
    serialize_submission,
    write_fit_report,
    write_frame,
)
from mixline.scoring import RULES, score_forecast
from utils.utils_config import (
    get_fit_components,
    get_fit_max_outer_iter,
    get_fit_rel_tol,
    get_grid_points,
    get_hub_quantile_levels,
    get_interval_alpha,
    get_max_components,
    get_random_seed,
    get_worker_count,
    parse_levels,
)
from utils.utils_logger import logger

#####################################
# Exit codes and rule support
#####################################

EXIT_OK = 0
EXIT_STRUCTURE = 1
EXIT_INVALID = 2

SUPPORTED_RULES = {
    SubmissionKind.MIXTURE: ("logs", "crps", "is", "wis"),
    SubmissionKind.QUANTILE: ("is", "wis"),
    SubmissionKind.BIN: ("logs", "crps"),
}

WEIGHT_SCHEMES = ("equal", "pmp", "pmp-cdf", "crps-min", "em", "explicit")


class UsageError(MixlineError):
    """Flags or inputs that do not fit together."""


#####################################
# Shared helpers
#####################################


def _kind(value: Optional[str]) -> Optional[SubmissionKind]:
    return None if value is None else SubmissionKind(value)


def _write_rows(rows: list, columns: list, path: str) -> None:
    write_frame(pd.DataFrame(rows, columns=columns, dtype=str), path)


def _run_per_key(fn, items: list, workers: int) -> list:
    if workers > 1 and len(items) > 1:
        return Parallel(n_jobs=workers)(delayed(fn)(*item) for item in items)
    return [fn(*item) for item in items]


#####################################
# Commands
#####################################


def cmd_validate(args: argparse.Namespace) -> int:
    table = parse_submission(args.submission, _kind(args.kind), args.max_components)
    message = f"{len(table)} forecasts OK"
    logger.info(f"{args.submission}: {message}")
    print(message)
    return EXIT_OK


def cmd_score(args: argparse.Namespace) -> int:
    table = parse_submission(args.submission, _kind(args.kind), args.max_components)
    if args.rule not in SUPPORTED_RULES[table.kind]:
        raise UsageError(f"rule '{args.rule}' is not supported for {table.kind.value} submissions")
    truth = parse_truth(args.truth)
    missing = [str(key) for key in table.keys() if key not in truth.values]
    if missing:
        raise UsageError(f"no truth value for forecast(s): {', '.join(missing)}")

    levels = parse_levels(args.levels) if args.levels else get_hub_quantile_levels()
    alpha = args.alpha if args.alpha is not None else get_interval_alpha()
    items = [(table.entries[key], truth.get(key), args.rule, levels, alpha) for key in table.keys()]
    scores = _run_per_key(score_forecast, items, args.workers)

    rows = []
    for key, score in zip(table.keys(), scores):
        logger.info(f"{key} {args.rule} = {score}")
        rows.append([key.location, key.target, key.unit, args.rule, format_real(score)])
    _write_rows(rows, ["location", "target", "unit", "rule", "score"], args.out)
    print(f"Scored {len(rows)} forecasts with {args.rule}; wrote {args.out}")
    return EXIT_OK


def _estimate_weights(args: argparse.Namespace, tables: list[SubmissionTable],
                      keys: list[ForecastKey]) -> dict:
    """Weights per key (or the same pooled vector for every key)."""
    count = len(tables)
    scheme = args.weights
    if scheme == "equal":
        weights = equal_weights(count)
        return {key: weights for key in keys}
    if scheme == "explicit":
        if not args.weight_values:
            raise UsageError("--weights explicit needs --weight-values")
        weights = np.array(parse_levels(args.weight_values))
        if weights.size != count:
            raise UsageError(f"{count} submissions but {weights.size} weight values")
        return {key: weights for key in keys}

    if args.truth is None:
        raise UsageError(f"--weights {scheme} needs --truth")
    if tables[0].kind is not SubmissionKind.MIXTURE:
        raise UsageError(f"--weights {scheme} is only available for mixture submissions")
    truth = parse_truth(args.truth)
    missing = [str(key) for key in keys if key not in truth.values]
    if missing:
        raise UsageError(f"no truth value for forecast(s): {', '.join(missing)}")

    def estimate(subset: list[ForecastKey]) -> np.ndarray:
        forecasts = [[table.entries[key] for table in tables] for key in subset]
        observations = [truth.get(key) for key in subset]
        if scheme in ("pmp", "pmp-cdf"):
            mode = "cdf" if scheme == "pmp-cdf" else "density"
            return pmp_weights_from_likelihoods(likelihood_matrix(forecasts, observations, mode)).as_array()
        if scheme == "em":
            return em_weights_from_likelihoods(likelihood_matrix(forecasts, observations, "density")).as_array()
        return crps_min_weights_from_forecasts(forecasts, observations, workers=args.workers).as_array()

    if args.pool:
        pooled = estimate(keys)
        logger.info(f"Pooled {scheme} weights: {pooled.tolist()}")
        return {key: pooled for key in keys}
    return {key: estimate([key]) for key in keys}


def cmd_ensemble(args: argparse.Namespace) -> int:
    tables = [parse_submission(path, _kind(args.kind), args.max_components) for path in args.submissions]
    kinds = {table.kind for table in tables}
    if len(kinds) != 1:
        raise EnsembleError(f"submissions mix kinds: {', '.join(sorted(kind.value for kind in kinds))}")
    keys = tables[0].keys()
    for path, table in zip(args.submissions, tables):
        if table.keys() != keys:
            raise EnsembleError(f"{path} does not cover the same forecast keys as {args.submissions[0]}")

    weights = _estimate_weights(args, tables, keys)
    entries = {}
    for key in keys:
        models = [table.entries[key] for table in tables]
        if tables[0].kind is SubmissionKind.MIXTURE:
            entries[key] = ma_ensemble(models, weights[key])
        elif tables[0].kind is SubmissionKind.QUANTILE:
            entries[key] = quantile_average(models, weights[key], args.method)
        else:
            entries[key] = bin_average(models, weights[key])
    serialize_submission(SubmissionTable(tables[0].kind, entries), args.out)

    if args.weights_out:
        rows = [
            [key.location, key.target, key.unit, path, format_real(weight)]
            for key in keys
            for path, weight in zip(args.submissions, weights[key])
        ]
        _write_rows(rows, ["location", "target", "unit", "model", "weight"], args.weights_out)
    print(f"Ensembled {len(keys)} forecasts from {len(tables)} submissions ({args.weights} weights); wrote {args.out}")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    table = parse_submission(args.submission, _kind(args.kind))
    if table.kind is SubmissionKind.MIXTURE:
        raise UsageError("fit expects a bin or quantile submission")
    cfg = FitConfig(
        components=args.components,
        shared_sigma=not args.free_sigma,
        rel_tol=get_fit_rel_tol(),
        max_outer_iter=get_fit_max_outer_iter(),
    )
    result = convert(table, cfg, workers=args.workers, sweep=args.sweep, em_draws=args.em_draws, seed=args.seed)
    serialize_submission(result.table, args.out)
    out = pathlib.Path(args.out)
    report = args.report or str(out.with_name(f"{out.stem}_report.csv"))
    write_fit_report(result, report)
    if result.non_converged:
        logger.warning(f"{len(result.non_converged)} fits did not converge; see {report}")
    print(f"Fitted {len(result.table)} of {len(table)} forecasts ({len(result.errors)} errors); wrote {args.out}")
    return EXIT_OK


def cmd_grid(args: argparse.Namespace) -> int:
    table = parse_submission(args.submission, SubmissionKind.MIXTURE)
    key = ForecastKey(args.location, args.target, args.unit)
    if key not in table.entries:
        raise UsageError(f"forecast {key} is not in {args.submission}")
    points = args.points if args.points is not None else get_grid_points()
    if points < 2:
        raise UsageError(f"--points must be at least 2, got {points}")
    m = table.entries[key]
    low, high = m.quantile(np.array([1e-4, 1 - 1e-4]))
    xs = np.linspace(low, high, points)
    pdf, cdf = np.asarray(m.pdf(xs)), np.asarray(m.cdf(xs))
    rows = [[format_real(x), format_real(d), format_real(c)] for x, d, c in zip(xs, pdf, cdf)]
    _write_rows(rows, ["x", "pdf", "cdf"], args.out)
    print(f"Wrote {points} grid points for {key} to {args.out}")
    return EXIT_OK


#####################################
# Argument parsing
#####################################


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hub_cli", description="Mixture forecast hub operations.")
    parser.add_argument("--seed", type=int, default=get_random_seed(), help="Seed wherever sampling occurs.")
    parser.add_argument("--workers", type=int, default=get_worker_count(), help="Parallel workers for per-key work.")
    commands = parser.add_subparsers(dest="command", required=True)

    kinds = [kind.value for kind in SubmissionKind]
    max_components = get_max_components()

    validate = commands.add_parser("validate", help="Check a submission file.")
    validate.add_argument("submission")
    validate.add_argument("--kind", choices=kinds)
    validate.add_argument("--max-components", type=int, default=max_components)
    validate.set_defaults(handler=cmd_validate)

    score = commands.add_parser("score", help="Score a submission against truth.")
    score.add_argument("submission")
    score.add_argument("truth")
    score.add_argument("--kind", choices=kinds)
    score.add_argument("--rule", choices=RULES, required=True)
    score.add_argument("--levels", help="Comma-separated quantile levels for wis on mixtures.")
    score.add_argument("--alpha", type=float, help="Central interval alpha for the is rule.")
    score.add_argument("--max-components", type=int, default=max_components)
    score.add_argument("--out", required=True)
    score.set_defaults(handler=cmd_score)

    ensemble = commands.add_parser("ensemble", help="Combine submissions into one.")
    ensemble.add_argument("submissions", nargs="+")
    ensemble.add_argument("--kind", choices=kinds)
    ensemble.add_argument("--weights", choices=WEIGHT_SCHEMES, default="equal")
    ensemble.add_argument("--weight-values", help="Comma-separated weights for --weights explicit.")
    ensemble.add_argument("--truth")
    ensemble.add_argument("--pool", action="store_true", help="Estimate one weight vector across all keys.")
    ensemble.add_argument("--method", choices=("mean", "median"), default="mean")
    ensemble.add_argument("--weights-out")
    ensemble.add_argument("--max-components", type=int, default=max_components)
    ensemble.add_argument("--out", required=True)
    ensemble.set_defaults(handler=cmd_ensemble)

    fit = commands.add_parser("fit", help="Fit normal mixtures to bin or quantile forecasts.")
    fit.add_argument("submission")
    fit.add_argument("--kind", choices=("bin", "quantile"))
    fit.add_argument("--components", type=int, default=get_fit_components())
    fit.add_argument("--sweep", action="store_true", help="Fit C = 1..components with nested starts.")
    fit.add_argument("--free-sigma", action="store_true", help="One standard deviation per component.")
    fit.add_argument("--em-draws", type=int, help="Resample each bin forecast into this many draws and fit by EM.")
    fit.add_argument("--out", required=True)
    fit.add_argument("--report")
    fit.set_defaults(handler=cmd_fit)

    grid = commands.add_parser("grid", help="Plot-ready pdf and cdf values for one forecast.")
    grid.add_argument("submission")
    grid.add_argument("--location", required=True)
    grid.add_argument("--target", required=True)
    grid.add_argument("--unit", required=True)
    grid.add_argument("--points", type=int)
    grid.add_argument("--out", required=True)
    grid.set_defaults(handler=cmd_grid)
    return parser


#####################################
# Define main function for this module
#####################################


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one hub command and return its exit code."""
    args = build_parser().parse_args(argv)
    logger.info(f"START hub_cli {args.command}.")
    try:
        return args.handler(args)
    except (SubmissionStructureError, OSError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STRUCTURE
    except SubmissionValidationError as e:
        for issue in e.issues:
            print(f"invalid: {issue}", file=sys.stderr)
        logger.error(f"{args.command}: {e}")
        return EXIT_INVALID
    except (MixlineError, ValueError, ArithmeticError) as e:
        logger.error(f"{args.command}: {e}")
        print(f"invalid: {e}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        logger.info(f"END hub_cli {args.command}.")


#####################################
# Conditional Execution
#####################################

if __name__ == "__main__":
    sys.exit(main())
