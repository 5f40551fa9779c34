"""
representations.py - bin, quantile and sample forecasts.

BinForecast bins are half-open, B_i = [b_{i-1}, b_i). The bin CDF at x
includes the whole bin containing x, so it is a right-continuous step
function that reaches 1 at the last edge.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

# Import external packages
import numpy as np
from scipy import stats

# Import functions from local modules
from mixline.distributions import ArrayLike, Component, Family, Mixture, as_output
from mixline.errors import (
    DegenerateSampleError,
    InvalidParameterError,
    MassDeficitError,
    WeightError,
)
from utils.utils_logger import logger

#####################################
# Constants
#####################################

BIN_SUM_TOL = 1e-6
SAMPLE_WEIGHT_TOL = 1e-9
DISCRETIZE_MASS_TOL = 1e-6


#####################################
# Bin forecasts
#####################################


@dataclass(frozen=True)
class BinForecast:
    """Probabilities p_1..p_K on contiguous bins [b_0, b_1), ..., [b_{K-1}, b_K)."""

    edges: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        edges = tuple(float(edge) for edge in self.edges)
        probs = tuple(float(prob) for prob in self.probs)
        if len(edges) < 2:
            raise InvalidParameterError("a bin forecast needs at least two edges")
        if len(probs) != len(edges) - 1:
            raise InvalidParameterError(
                f"{len(edges)} edges need {len(edges) - 1} probabilities, got {len(probs)}"
            )
        if not all(math.isfinite(edge) for edge in edges):
            raise InvalidParameterError("bin edges must be finite")
        if any(right <= left for left, right in zip(edges, edges[1:])):
            raise InvalidParameterError("bin edges must be strictly increasing")
        if any(not (prob >= 0) or not math.isfinite(prob) for prob in probs):
            raise InvalidParameterError("bin probabilities must be finite and nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > BIN_SUM_TOL:
            raise WeightError(f"bin probabilities sum to {total!r}, expected 1")
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "probs", probs)

    @property
    def n_bins(self) -> int:
        return len(self.probs)

    @property
    def midpoints(self) -> np.ndarray:
        edges = np.asarray(self.edges)
        return 0.5 * (edges[:-1] + edges[1:])

    def _cumulative(self) -> np.ndarray:
        cumulative = np.concatenate(([0.0], np.cumsum(self.probs)))
        cumulative[-1] = 1.0
        return np.minimum(cumulative, 1.0)

    def cdf(self, x: ArrayLike):
        """P(X <= x), counting the bin that contains x in full."""
        values = np.asarray(x, dtype=float)
        index = np.minimum(np.searchsorted(self.edges, values, side="right"), self.n_bins)
        return as_output(self._cumulative()[index], x)

    def cdf_left(self, x: ArrayLike):
        """P(X < x): the step value just below x."""
        values = np.asarray(x, dtype=float)
        index = np.minimum(np.searchsorted(self.edges, values, side="left"), self.n_bins)
        return as_output(self._cumulative()[index], x)

    def bin_index(self, x: float) -> Optional[int]:
        """Index of the bin containing x, or None outside [b_0, b_K)."""
        index = int(np.searchsorted(self.edges, float(x), side="right")) - 1
        if 0 <= index < self.n_bins:
            return index
        return None

    def bin_probability(self, x: float) -> float:
        index = self.bin_index(x)
        return 0.0 if index is None else self.probs[index]


def bin_cdf(f: BinForecast, x: ArrayLike):
    return f.cdf(x)


def discretize(m: Mixture, edges: Sequence[float], mass_tol: float = DISCRETIZE_MASS_TOL) -> BinForecast:
    """Integrate a mixture over each bin and renormalize the tail dust into the bins."""
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise InvalidParameterError("edges must be a strictly increasing list of at least two values")
    # P(X in [a, b)) = F(b-) - F(a-)
    cumulative = np.asarray(m.cdf_left(edges), dtype=float)
    probs = np.clip(np.diff(cumulative), 0.0, None)
    mass = float(probs.sum())
    if mass < 1.0 - mass_tol:
        raise MassDeficitError(
            f"mixture has mass {mass:.8f} on [{edges[0]}, {edges[-1]}); truncate it to the bin range first"
        )
    logger.debug(f"Discretized mixture into {probs.size} bins, residual mass {1.0 - mass:.3e}")
    return BinForecast(tuple(edges), tuple(probs / mass))


#####################################
# Quantile forecasts
#####################################


@dataclass(frozen=True)
class QuantileForecast:
    """Values q_i at nominal levels a_i, with P(Y <= q_i) = a_i."""

    levels: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        levels = tuple(float(level) for level in self.levels)
        values = tuple(float(value) for value in self.values)
        if not levels:
            raise InvalidParameterError("a quantile forecast needs at least one level")
        if len(levels) != len(values):
            raise InvalidParameterError(f"{len(levels)} levels but {len(values)} values")
        if any(not (0 < level < 1) for level in levels):
            raise InvalidParameterError("quantile levels must lie strictly inside (0, 1)")
        if any(right <= left for left, right in zip(levels, levels[1:])):
            raise InvalidParameterError("quantile levels must be strictly increasing")
        if not all(math.isfinite(value) for value in values):
            raise InvalidParameterError("quantile values must be finite")
        for index, (left, right) in enumerate(zip(values, values[1:])):
            if right < left:
                raise InvalidParameterError(
                    f"quantile values decrease between levels {levels[index]} and {levels[index + 1]}"
                )
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.levels)

    def value_at(self, level: float) -> float:
        for known, value in zip(self.levels, self.values):
            if abs(known - level) <= 1e-12:
                return value
        raise KeyError(level)


#####################################
# Sample forecasts
#####################################


@dataclass(frozen=True)
class SampleForecast:
    """Draws X_1..X_n, optionally weighted (uniform when weights is None)."""

    draws: tuple[float, ...]
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        draws = tuple(float(draw) for draw in np.ravel(self.draws))
        if not draws:
            raise DegenerateSampleError("a sample forecast needs at least one draw")
        if not all(math.isfinite(draw) for draw in draws):
            raise InvalidParameterError("draws must be finite")
        object.__setattr__(self, "draws", draws)
        if self.weights is not None:
            weights = tuple(float(weight) for weight in np.ravel(self.weights))
            if len(weights) != len(draws):
                raise InvalidParameterError(f"{len(draws)} draws but {len(weights)} weights")
            if any(not (weight > 0) for weight in weights):
                raise WeightError("sample weights must be positive")
            total = math.fsum(weights)
            if abs(total - 1.0) > SAMPLE_WEIGHT_TOL:
                raise WeightError(f"sample weights sum to {total!r}, expected 1")
            object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return len(self.draws)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.draws)

    @property
    def probabilities(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return np.asarray(self.weights)

    def _sorted(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.values, kind="stable")
        points = self.values[order]
        cumulative = np.cumsum(self.probabilities[order])
        cumulative[-1] = 1.0
        return points, cumulative

    def cdf(self, x: ArrayLike):
        points, cumulative = self._sorted()
        index = np.searchsorted(points, np.asarray(x, dtype=float), side="right")
        steps = np.concatenate(([0.0], cumulative))
        return as_output(steps[index], x)

    def cdf_left(self, x: ArrayLike):
        points, cumulative = self._sorted()
        index = np.searchsorted(points, np.asarray(x, dtype=float), side="left")
        steps = np.concatenate(([0.0], cumulative))
        return as_output(steps[index], x)

    def mean(self) -> float:
        return float(np.sum(self.probabilities * self.values))

    def std(self) -> float:
        """Sample standard deviation, n-1 denominator (reliability weights when weighted)."""
        if self.n < 2:
            raise DegenerateSampleError("a standard deviation needs at least two draws")
        if self.weights is None:
            return float(np.std(self.values, ddof=1))
        w = self.probabilities
        centered = self.values - self.mean()
        return float(np.sqrt(np.sum(w * centered**2) / (1.0 - np.sum(w**2))))


def ecdf(s: SampleForecast, x: ArrayLike):
    return s.cdf(x)


def silverman_bandwidth(s: SampleForecast) -> float:
    """h = 0.9 min(sd, IQR/1.34) n^(-1/5), falling back to sd when the IQR is zero."""
    sd = s.std()
    if not sd > 0:
        raise DegenerateSampleError("sample has zero variance; pass an explicit bandwidth")
    q25, q75 = _sample_quantiles(s, np.array([0.25, 0.75]))
    iqr = q75 - q25
    spread = min(sd, iqr / 1.34) if iqr > 0 else sd
    return 0.9 * spread * s.n ** (-0.2)


def kernel_density(s: SampleForecast, x: ArrayLike, bandwidth: Optional[float] = None):
    """Gaussian kernel density estimate at x."""
    if bandwidth is None:
        bandwidth = silverman_bandwidth(s)
    elif not bandwidth > 0:
        raise InvalidParameterError(f"bandwidth must be > 0, got {bandwidth}")
    points = np.asarray(x, dtype=float)
    scaled = (points[..., None] - s.values) / bandwidth
    density = np.sum(s.probabilities * stats.norm.pdf(scaled), axis=-1) / bandwidth
    return as_output(density, x)


def gaussian_approx(s: SampleForecast) -> Mixture:
    """Single normal with the sample mean and standard deviation."""
    if s.n < 2:
        raise DegenerateSampleError("a Gaussian approximation needs at least two draws")
    sd = s.std()
    if not sd > 0:
        raise DegenerateSampleError("sample has zero variance")
    return Mixture((Component(Family.NORM, s.mean(), sd),))


#####################################
# Quantiles from any forecast
#####################################


def _sample_quantiles(s: SampleForecast, levels: np.ndarray) -> np.ndarray:
    if s.weights is None:
        return np.quantile(s.values, levels, method="linear")
    points, cumulative = s._sorted()
    # Generalized inverse of the weighted ECDF.
    index = np.searchsorted(cumulative, levels - 1e-12, side="left")
    return points[np.minimum(index, points.size - 1)]


def _check_levels(levels: Sequence[float]) -> np.ndarray:
    levels = np.asarray(levels, dtype=float)
    if levels.ndim != 1 or levels.size == 0:
        raise InvalidParameterError("levels must be a nonempty list")
    if np.any((levels <= 0) | (levels >= 1)):
        raise InvalidParameterError("levels must lie strictly inside (0, 1)")
    if np.any(np.diff(levels) <= 0):
        raise InvalidParameterError("levels must be strictly increasing")
    return levels


def quantiles_of(forecast: Union[Mixture, SampleForecast], levels: Sequence[float]) -> QuantileForecast:
    """Quantile forecast at the given levels from a mixture or a sample."""
    grid = _check_levels(levels)
    if isinstance(forecast, Mixture):
        values = np.asarray(forecast.quantile(grid), dtype=float)
    elif isinstance(forecast, SampleForecast):
        values = _sample_quantiles(forecast, grid)
    else:
        raise InvalidParameterError(f"cannot take quantiles of {type(forecast).__name__}")
    values = np.maximum.accumulate(values)
    return QuantileForecast(tuple(grid), tuple(values))


def sample_from(m: Mixture, n: int, seed: int) -> SampleForecast:
    return SampleForecast(tuple(m.sample(n, seed)))
