"""
formats.py - read, validate and write hub submission and truth files.

Submission schemas (comma separated, header row, UTF-8):

    bin       location,target,type,unit,bin,value
    quantile  location,target,type,unit,quantile,value
    mixture   location,target,type,unit,family,param1,param2,[param3],weight,[lowerlim,upperlim]

Rows sharing (location, target, unit) form one forecast. The type column
must read "bin", "quantile" or "dist" to match the file kind; "point"
rows are skipped. Empty cells and "NA" mean an absent optional value.

Truth files use location,target,unit,value with one row per forecast.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
import pathlib
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Union

# Import external packages
import pandas as pd
from joblib import Parallel, delayed

# Import functions from local modules
from mixline.distributions import Component, Family, Mixture
from mixline.errors import (
    InvalidParameterError,
    MixlineError,
    SubmissionStructureError,
    SubmissionValidationError,
    ValidationIssue,
)
from mixline.fitting import (
    FitConfig,
    bin_sample,
    fit_bins,
    fit_bins_sweep,
    fit_quantiles,
    fit_quantiles_sweep,
    fit_sample_em,
)
from mixline.representations import BIN_SUM_TOL, BinForecast, QuantileForecast
from utils.utils_logger import logger

#####################################
# Schema constants
#####################################

KEY_COLUMNS = ("location", "target", "unit")
BIN_COLUMNS = ("location", "target", "type", "unit", "bin", "value")
QUANTILE_COLUMNS = ("location", "target", "type", "unit", "quantile", "value")
MIXTURE_COLUMNS = ("location", "target", "type", "unit", "family", "param1", "param2", "weight")
TRUTH_COLUMNS = ("location", "target", "unit", "value")
MISSING = "NA"

WEIGHT_SUM_TOL = 1e-6
WEIGHT_EXACT_TOL = 1e-9

PathLike = Union[str, pathlib.Path]


class SubmissionKind(str, Enum):
    BIN = "bin"
    QUANTILE = "quantile"
    MIXTURE = "mixture"

    @property
    def type_tag(self) -> str:
        """Value the type column carries in files of this kind."""
        return "dist" if self is SubmissionKind.MIXTURE else self.value


@dataclass(frozen=True, order=True)
class ForecastKey:
    location: str
    target: str
    unit: str

    def __post_init__(self):
        for name in KEY_COLUMNS:
            if not str(getattr(self, name)).strip():
                raise InvalidParameterError(f"forecast key field '{name}' is empty")

    def __str__(self) -> str:
        return f"({self.location}, {self.target}, {self.unit})"


Forecast = Union[BinForecast, QuantileForecast, Mixture]


@dataclass(frozen=True)
class Provenance:
    """Where a table came from: source path and the file rows of each forecast."""

    source: str
    rows: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SubmissionTable:
    kind: SubmissionKind
    entries: dict
    provenance: Optional[Provenance] = field(default=None, compare=False)

    def __len__(self) -> int:
        return len(self.entries)

    def keys(self) -> list[ForecastKey]:
        return sorted(self.entries)


@dataclass(frozen=True)
class TruthTable:
    values: dict

    def __len__(self) -> int:
        return len(self.values)

    def get(self, key: ForecastKey) -> float:
        try:
            return self.values[key]
        except KeyError:
            raise InvalidParameterError(f"no truth value for forecast {key}") from None


#####################################
# Cell helpers
#####################################


def format_real(value: Optional[float]) -> str:
    """Shortest text that parses back to exactly the same float."""
    if value is None:
        return MISSING
    return repr(float(value))


def _blank(text: str) -> bool:
    return text.strip() == "" or text.strip().upper() == MISSING


def _parse_real(text: str) -> float:
    value = float(text.strip())
    if not math.isfinite(value):
        raise ValueError(f"'{text}' is not a finite number")
    return value


def _parse_bin_label(text: str) -> tuple[float, Optional[float]]:
    """'[a,b)' gives (a, b); a bare number is the inclusive left edge."""
    label = text.strip()
    if label.startswith("["):
        if not label.endswith(")"):
            raise ValueError(f"bin '{text}' must look like [a,b)")
        left, _, right = label[1:-1].partition(",")
        return _parse_real(left), _parse_real(right)
    return _parse_real(label), None


def _read_table(path: PathLike) -> pd.DataFrame:
    path = pathlib.Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8", skipinitialspace=True)
    except FileNotFoundError:
        raise SubmissionStructureError(f"file not found: {path}") from None
    except pd.errors.EmptyDataError:
        raise SubmissionStructureError(f"{path} is empty; a header row is required") from None
    except (OSError, UnicodeDecodeError, pd.errors.ParserError) as e:
        raise SubmissionStructureError(f"cannot read {path}: {e}") from None
    frame.columns = [str(column).strip().lower() for column in frame.columns]
    return frame


def infer_kind(columns) -> SubmissionKind:
    columns = set(columns)
    if "bin" in columns:
        return SubmissionKind.BIN
    if "quantile" in columns:
        return SubmissionKind.QUANTILE
    if "family" in columns:
        return SubmissionKind.MIXTURE
    raise SubmissionStructureError("cannot tell the submission kind: no bin, quantile or family column")


def required_columns(kind: SubmissionKind) -> tuple[str, ...]:
    return {
        SubmissionKind.BIN: BIN_COLUMNS,
        SubmissionKind.QUANTILE: QUANTILE_COLUMNS,
        SubmissionKind.MIXTURE: MIXTURE_COLUMNS,
    }[kind]


#####################################
# Parsing
#####################################


class _IssueCollector:
    def __init__(self):
        self.issues: list[ValidationIssue] = []

    def add(self, row: Optional[int], column: Optional[str], key, message: str) -> None:
        self.issues.append(ValidationIssue(row, column, None if key is None else str(key), message))

    def real(self, record: dict, column: str, row: int, key, optional: bool = False) -> Optional[float]:
        text = record.get(column, "")
        if optional and _blank(text):
            return None
        try:
            return _parse_real(text)
        except ValueError:
            self.add(row, column, key, f"'{text}' is not a valid number")
            return None


def _bin_forecast(rows: list, key: ForecastKey, issues: _IssueCollector) -> Optional[BinForecast]:
    parsed = []
    for row, record in rows:
        try:
            left, right = _parse_bin_label(record["bin"])
        except ValueError:
            issues.add(row, "bin", key, f"'{record['bin']}' is not a valid bin")
            continue
        prob = issues.real(record, "value", row, key)
        if prob is None:
            continue
        if prob < 0:
            issues.add(row, "value", key, f"bin probability {prob} is negative")
            continue
        parsed.append((left, right, prob, row))
    if len(parsed) != len(rows):
        return None

    parsed.sort(key=lambda item: item[0])
    lefts = [item[0] for item in parsed]
    for (left, _, _, row), following in zip(parsed, lefts[1:]):
        if following == left:
            issues.add(row, "bin", key, f"duplicate bin starting at {left}")
            return None

    edges = list(lefts)
    for index, (left, right, _, row) in enumerate(parsed):
        if index + 1 < len(parsed):
            if right is not None and right != parsed[index + 1][0]:
                issues.add(row, "bin", key, f"bin [{left},{right}) is not contiguous with the next bin")
                return None
        elif right is not None:
            edges.append(right)
        elif len(parsed) > 1:
            edges.append(left + (left - parsed[index - 1][0]))
        else:
            issues.add(row, "bin", key, "cannot infer the right edge of a single numeric bin; use [a,b)")
            return None
    if edges[-1] <= edges[-2]:
        issues.add(parsed[-1][3], "bin", key, "last bin has no width")
        return None

    probs = [item[2] for item in parsed]
    total = math.fsum(probs)
    if abs(total - 1.0) > BIN_SUM_TOL:
        issues.add(parsed[0][3], "value", key, f"bin probabilities sum to {total!r}, expected 1")
        return None
    return BinForecast(tuple(edges), tuple(probs))


def _quantile_forecast(rows: list, key: ForecastKey, issues: _IssueCollector) -> Optional[QuantileForecast]:
    parsed = []
    for row, record in rows:
        level = issues.real(record, "quantile", row, key)
        value = issues.real(record, "value", row, key)
        if level is None or value is None:
            continue
        if not 0 < level < 1:
            issues.add(row, "quantile", key, f"quantile level {level} is outside (0, 1)")
            continue
        parsed.append((level, value, row))
    if len(parsed) != len(rows):
        return None

    parsed.sort(key=lambda item: item[0])
    ok = True
    for (level, value, _), (next_level, next_value, next_row) in zip(parsed, parsed[1:]):
        if next_level == level:
            issues.add(next_row, "quantile", key, f"duplicate quantile level {level}")
            ok = False
        elif next_value < value:
            issues.add(next_row, "value", key,
                       f"quantile values decrease: {next_value} at level {next_level} < {value} at level {level}")
            ok = False
    if not ok:
        return None
    return QuantileForecast(tuple(item[0] for item in parsed), tuple(item[1] for item in parsed))


def _mixture_forecast(rows: list, key: ForecastKey, issues: _IssueCollector,
                      max_components: Optional[int]) -> Optional[Mixture]:
    if max_components is not None and len(rows) > max_components:
        issues.add(rows[0][0], None, key, f"{len(rows)} components exceed the limit of {max_components}")
        return None
    components = []
    for row, record in rows:
        try:
            family = Family.parse(record["family"])
        except InvalidParameterError as e:
            issues.add(row, "family", key, str(e))
            continue
        values = {
            "param1": issues.real(record, "param1", row, key),
            "param2": issues.real(record, "param2", row, key, optional=True),
            "param3": issues.real(record, "param3", row, key, optional=True),
            "weight": issues.real(record, "weight", row, key),
            "lower": issues.real(record, "lowerlim", row, key, optional=True),
            "upper": issues.real(record, "upperlim", row, key, optional=True),
        }
        if values["param1"] is None or values["weight"] is None:
            continue
        if not values["weight"] > 0:
            issues.add(row, "weight", key, f"component weight {values['weight']} must be positive")
            continue
        try:
            components.append(Component(family, weight=values.pop("weight"), **values))
        except InvalidParameterError as e:
            issues.add(row, None, key, str(e))
    if len(components) != len(rows):
        return None

    total = math.fsum(component.weight for component in components)
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        issues.add(rows[0][0], "weight", key, f"component weights sum to {total!r}, expected 1")
        return None
    return Mixture.from_components(components, normalize=abs(total - 1.0) > WEIGHT_EXACT_TOL)


def parse_submission(path: PathLike, kind: Optional[Union[SubmissionKind, str]] = None,
                     max_components: Optional[int] = None) -> SubmissionTable:
    """Read and validate a submission file; every problem in the file is reported together."""
    frame = _read_table(path)
    kind = infer_kind(frame.columns) if kind is None else SubmissionKind(kind)
    missing = [column for column in required_columns(kind) if column not in frame.columns]
    if missing:
        raise SubmissionStructureError(f"{path} lacks required {kind.value} column(s): {', '.join(missing)}")

    issues = _IssueCollector()
    groups: dict[ForecastKey, list] = defaultdict(list)
    skipped = 0
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 2
        record = {column: str(value).strip() for column, value in record.items()}
        try:
            key = ForecastKey(record["location"], record["target"], record["unit"])
        except InvalidParameterError as e:
            issues.add(row, None, None, str(e))
            continue
        row_type = record["type"].lower()
        if row_type == "point":
            skipped += 1
            continue
        if row_type != kind.type_tag:
            issues.add(row, "type", key, f"type '{record['type']}' does not match a {kind.value} file")
            continue
        groups[key].append((row, record))
    if skipped:
        logger.warning(f"Ignored {skipped} point row(s) in {path}")

    entries = {}
    for key, rows in groups.items():
        if kind is SubmissionKind.BIN:
            forecast = _bin_forecast(rows, key, issues)
        elif kind is SubmissionKind.QUANTILE:
            forecast = _quantile_forecast(rows, key, issues)
        else:
            forecast = _mixture_forecast(rows, key, issues, max_components)
        if forecast is not None:
            entries[key] = forecast

    if issues.issues:
        for issue in issues.issues:
            logger.error(f"{path}: {issue}")
        raise SubmissionValidationError(issues.issues)

    spans = {key: (rows[0][0], rows[-1][0]) for key, rows in groups.items()}
    logger.info(f"Parsed {len(entries)} {kind.value} forecasts from {path}")
    return SubmissionTable(kind, entries, Provenance(str(path), spans))


def parse_truth(path: PathLike) -> TruthTable:
    frame = _read_table(path)
    missing = [column for column in TRUTH_COLUMNS if column not in frame.columns]
    if missing:
        raise SubmissionStructureError(f"{path} lacks required truth column(s): {', '.join(missing)}")
    issues = _IssueCollector()
    values = {}
    for index, record in enumerate(frame.to_dict("records")):
        row = index + 2
        record = {column: str(value).strip() for column, value in record.items()}
        try:
            key = ForecastKey(record["location"], record["target"], record["unit"])
        except InvalidParameterError as e:
            issues.add(row, None, None, str(e))
            continue
        value = issues.real(record, "value", row, key)
        if value is None:
            continue
        if key in values:
            issues.add(row, None, key, "duplicate truth value")
            continue
        values[key] = value
    if issues.issues:
        raise SubmissionValidationError(issues.issues)
    logger.info(f"Parsed {len(values)} truth values from {path}")
    return TruthTable(values)


#####################################
# Serialization
#####################################


def _bin_labels(f: BinForecast) -> list[str]:
    edges = f.edges
    labels = [format_real(left) for left in edges[:-1]]
    last_left, last_right = edges[-2], edges[-1]
    inferred_ok = len(edges) > 2 and last_left + (last_left - edges[-3]) == last_right
    if not inferred_ok:
        labels[-1] = f"[{format_real(last_left)},{format_real(last_right)})"
    return labels


def submission_frame(t: SubmissionTable) -> pd.DataFrame:
    """The table as a frame of strings in file column order, rows sorted by key."""
    rows = []
    if t.kind is SubmissionKind.BIN:
        columns = list(BIN_COLUMNS)
        for key in t.keys():
            f = t.entries[key]
            for label, prob in zip(_bin_labels(f), f.probs):
                rows.append([key.location, key.target, "bin", key.unit, label, format_real(prob)])
    elif t.kind is SubmissionKind.QUANTILE:
        columns = list(QUANTILE_COLUMNS)
        for key in t.keys():
            q = t.entries[key]
            for level, value in zip(q.levels, q.values):
                rows.append([key.location, key.target, "quantile", key.unit, format_real(level), format_real(value)])
    else:
        components = [c for m in t.entries.values() for c in m.components]
        with_param3 = any(c.param3 is not None for c in components)
        with_limits = any(c.is_truncated for c in components)
        columns = ["location", "target", "type", "unit", "family", "param1", "param2"]
        columns += ["param3"] if with_param3 else []
        columns += ["weight"]
        columns += ["lowerlim", "upperlim"] if with_limits else []
        for key in t.keys():
            for c in t.entries[key].components:
                row = [key.location, key.target, "dist", key.unit, c.family.value,
                       format_real(c.param1), format_real(c.param2)]
                row += [format_real(c.param3)] if with_param3 else []
                row += [format_real(c.weight)]
                row += [format_real(c.lower), format_real(c.upper)] if with_limits else []
                rows.append(row)
    return pd.DataFrame(rows, columns=columns, dtype=str)


def write_frame(frame: pd.DataFrame, path: PathLike) -> None:
    path = pathlib.Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise SubmissionStructureError(f"cannot write {path}: {e}") from None


def serialize_submission(t: SubmissionTable, path: PathLike) -> None:
    frame = submission_frame(t)
    write_frame(frame, path)
    logger.info(f"Wrote {len(t)} {t.kind.value} forecasts ({len(frame)} rows) to {path}")


def serialize_truth(t: TruthTable, path: PathLike) -> None:
    rows = [[key.location, key.target, key.unit, format_real(t.values[key])] for key in sorted(t.values)]
    write_frame(pd.DataFrame(rows, columns=list(TRUTH_COLUMNS), dtype=str), path)
    logger.info(f"Wrote {len(t)} truth values to {path}")


#####################################
# Conversion to mixtures
#####################################


@dataclass(frozen=True)
class ConversionResult:
    """Fitted mixture table plus per-key fit reports (by component count) and per-key errors."""

    table: SubmissionTable
    reports: dict
    errors: dict

    @property
    def non_converged(self) -> list[ForecastKey]:
        return sorted(key for key, fits in self.reports.items() if not all(r.converged for r in fits.values()))


def _fit_forecast(forecast: Union[BinForecast, QuantileForecast], cfg: FitConfig, sweep: bool,
                  em_draws: Optional[int], seed: int) -> dict:
    counts = range(1, cfg.components + 1) if sweep else [cfg.components]
    if em_draws is not None:
        if not isinstance(forecast, BinForecast):
            raise InvalidParameterError("EM fits from resampled draws need a bin forecast")
        draws = bin_sample(forecast, em_draws, seed)
        return {c: fit_sample_em(draws, c, seed=seed) for c in counts}
    if isinstance(forecast, BinForecast):
        return fit_bins_sweep(forecast, cfg.components, cfg) if sweep else {cfg.components: fit_bins(forecast, cfg)}
    return fit_quantiles_sweep(forecast, cfg.components, cfg) if sweep else {cfg.components: fit_quantiles(forecast, cfg)}


def _convert_one(key: ForecastKey, forecast: Union[BinForecast, QuantileForecast], cfg: FitConfig, sweep: bool,
                 em_draws: Optional[int], seed: int) -> tuple[ForecastKey, Optional[dict], Optional[str]]:
    try:
        return key, _fit_forecast(forecast, cfg, sweep, em_draws, seed), None
    except (MixlineError, ValueError, ArithmeticError) as e:
        return key, None, str(e)


def convert(t: SubmissionTable, cfg: FitConfig = FitConfig(), workers: int = 1, sweep: bool = False,
            em_draws: Optional[int] = None, seed: int = 0) -> ConversionResult:
    """Fit every bin or quantile forecast with a normal mixture; failures are collected per key.

    With sweep=True each key is fit for C = 1..cfg.components (bin and
    quantile fits start from the previous solution with one component
    split) and the largest successful fit goes into the table. With
    em_draws set, bin forecasts are resampled into that many draws and
    fit by EM instead.
    """
    if t.kind is SubmissionKind.MIXTURE:
        raise InvalidParameterError("convert expects a bin or quantile table")
    keys = t.keys()
    items = [(key, t.entries[key], cfg, sweep, em_draws, seed) for key in keys]
    if workers > 1 and len(keys) > 1:
        outcomes = Parallel(n_jobs=workers)(delayed(_convert_one)(*item) for item in items)
    else:
        outcomes = [_convert_one(*item) for item in items]

    entries, reports, errors = {}, {}, {}
    for key, fits, error in sorted(outcomes, key=lambda outcome: outcome[0]):
        if error is not None:
            logger.warning(f"Fit failed for {key}: {error}")
            errors[key] = error
            continue
        reports[key] = fits
        entries[key] = fits[max(fits)].fitted
    logger.info(f"Converted {len(entries)} of {len(keys)} forecasts; {len(errors)} failed")
    return ConversionResult(SubmissionTable(SubmissionKind.MIXTURE, entries), reports, errors)


def fit_report_frame(result: ConversionResult) -> pd.DataFrame:
    columns = ["location", "target", "unit", "components", "objective", "value", "iterations", "converged", "error"]
    rows = []
    for key in sorted(set(result.reports) | set(result.errors)):
        if key in result.errors:
            rows.append([key.location, key.target, key.unit, None, None, None, None, False, result.errors[key]])
            continue
        for c, report in sorted(result.reports[key].items()):
            rows.append([key.location, key.target, key.unit, c, report.objective_name,
                         report.objective, report.iterations, report.converged, ""])
    return pd.DataFrame(rows, columns=columns)


def write_fit_report(result: ConversionResult, path: PathLike) -> None:
    frame = fit_report_frame(result)
    write_frame(frame, path)
    logger.info(f"Wrote fit report with {len(frame)} rows to {path}")
