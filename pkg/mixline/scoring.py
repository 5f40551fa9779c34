"""
scoring.py - proper scoring rules for mixture, bin, sample and quantile forecasts.

Lower is better for every score in this module.

    log_score       -log p(x*)
    crps            integral of (F(x) - 1{x* <= x})^2 dx
    interval_score  width plus 2/alpha times the miss distance
    wis             weighted average of interval scores and the median error
    ks_stat         largest gap between a sample ECDF and a CDF
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

# Import external packages
import numpy as np
from scipy import integrate, stats

# Import functions from local modules
from mixline.distributions import Mixture
from mixline.errors import (
    InvalidParameterError,
    QuadratureError,
    UnsupportedRuleError,
)
from mixline.representations import (
    BinForecast,
    QuantileForecast,
    SampleForecast,
    gaussian_approx,
    kernel_density,
    quantiles_of,
)
from utils.utils_logger import logger

#####################################
# Constants
#####################################

RULES = ("logs", "crps", "is", "wis")

CRPS_TAIL_LEVEL = 1e-9
CRPS_EPSABS = 1e-11
CRPS_EPSREL = 1e-10
CRPS_MAX_ERROR = 1e-6
_BREAK_LEVELS = (0.001, 0.01, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 0.999)

Forecast = Union[Mixture, BinForecast, SampleForecast]
StepForecast = Union[BinForecast, SampleForecast]


#####################################
# Logarithmic score
#####################################


def log_score(forecast: Forecast, x_star: float, method: str = "kd",
              bandwidth: Optional[float] = None) -> float:
    """Negative log predictive density at x*; +inf when the density there is zero.

    Bin forecasts use the mass of the bin containing x*. Sample forecasts
    use a Gaussian kernel density (method="kd") or the Gaussian
    approximation (method="ga").
    """
    if isinstance(forecast, Mixture):
        density = forecast.pdf(float(x_star))
    elif isinstance(forecast, BinForecast):
        density = forecast.bin_probability(x_star)
    elif isinstance(forecast, SampleForecast):
        if method == "kd":
            density = kernel_density(forecast, float(x_star), bandwidth)
        elif method == "ga":
            density = gaussian_approx(forecast).pdf(float(x_star))
        else:
            raise InvalidParameterError(f"unknown sample density method '{method}'")
    else:
        raise UnsupportedRuleError(f"log score is not defined for {type(forecast).__name__}")

    if not density > 0:
        logger.warning(f"Zero predictive density at x*={x_star}; log score is +inf")
        return math.inf
    return -math.log(density)


#####################################
# Continuous ranked probability score
#####################################


def crps_normal(mu: float, sigma: float, x_star: float) -> float:
    """Closed-form CRPS of Norm(mu, sigma)."""
    z = (x_star - mu) / sigma
    return float(sigma * (z * (2 * stats.norm.cdf(z) - 1) + 2 * stats.norm.pdf(z) - 1 / math.sqrt(math.pi)))


def crps_sample(s: SampleForecast, x_star: float) -> float:
    """Energy form E|X - x*| - E|X - X'| / 2 over the (weighted) draws."""
    order = np.argsort(s.values, kind="stable")
    x = s.values[order]
    w = s.probabilities[order]
    first = float(np.sum(w * np.abs(x - x_star)))
    below_weight = np.concatenate(([0.0], np.cumsum(w)[:-1]))
    below_sum = np.concatenate(([0.0], np.cumsum(w * x)[:-1]))
    pairs = 2.0 * float(np.sum(w * (x * below_weight - below_sum)))
    return first - 0.5 * pairs


def _jumps(forecast: StepForecast) -> np.ndarray:
    if isinstance(forecast, BinForecast):
        return np.asarray(forecast.edges)
    return np.unique(forecast.values)


def _cross_step(first: StepForecast, second: StepForecast, x_star: float) -> float:
    points = np.unique(np.concatenate((_jumps(first), _jumps(second), [x_star])))
    observed = (points[:-1] >= x_star).astype(float)
    first_gap = np.asarray(first.cdf(points[:-1]), dtype=float) - observed
    second_gap = np.asarray(second.cdf(points[:-1]), dtype=float) - observed
    return float(np.sum(np.diff(points) * first_gap * second_gap))


def _window(m: Mixture) -> tuple[float, float, np.ndarray]:
    """Integration range around a mixture's bulk, and the interior breakpoints to hand to quad."""
    q_low, q25, q75, q_high = (float(v) for v in m.quantile(
        np.array([CRPS_TAIL_LEVEL, 0.25, 0.75, 1 - CRPS_TAIL_LEVEL])))
    pad = max(q75 - q25, 1e-6 * max(1.0, abs(q_high)))
    low, high = q_low - pad, q_high + pad
    inner = np.concatenate([np.ravel(component.ppf(np.array(_BREAK_LEVELS))) for component in m.components])
    inner = np.concatenate((inner, m.support_points(low, high)))
    return low, high, inner[np.isfinite(inner)]


def _integrate(fn: Callable[[float], float], low: float, high: float, points: np.ndarray) -> tuple[float, float]:
    if high <= low:
        return 0.0, 0.0
    inside = np.unique(points[(points > low) & (points < high)])
    limit = max(200, 4 * inside.size)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(
            fn, low, high,
            points=inside if inside.size else None,
            limit=limit, epsabs=CRPS_EPSABS, epsrel=CRPS_EPSREL,
        )


def _cross_mixture(first: Mixture, second: Mixture, x_star: float) -> float:
    low, high, points = _window(first)
    if second is not first:
        second_low, second_high, second_points = _window(second)
        low, high = min(low, second_low), max(high, second_high)
        points = np.concatenate((points, second_points))

    def below(x: float) -> float:
        return first.cdf(x) * second.cdf(x)

    def above(x: float) -> float:
        return (1.0 - first.cdf(x)) * (1.0 - second.cdf(x))

    low, high = min(low, x_star), max(high, x_star)
    logger.debug(f"CRPS quadrature on [{low}, {x_star}] and [{x_star}, {high}]")

    left, left_err = _integrate(below, low, x_star, points)
    right, right_err = _integrate(above, x_star, high, points)
    if left_err + right_err > CRPS_MAX_ERROR:
        raise QuadratureError(
            f"CRPS quadrature error estimate {left_err + right_err:.3e} exceeds {CRPS_MAX_ERROR}"
        )
    return left + right


def crps_cross(first: Forecast, second: Forecast, x_star: float) -> float:
    """Integral of (F(x) - H(x)) (G(x) - H(x)) with H the step at x*; crps(F) is crps_cross(F, F)."""
    x_star = float(x_star)
    if not math.isfinite(x_star):
        raise InvalidParameterError("x* must be finite")
    if isinstance(first, Mixture) and isinstance(second, Mixture):
        return _cross_mixture(first, second, x_star)
    steps = (BinForecast, SampleForecast)
    if isinstance(first, steps) and isinstance(second, steps):
        return _cross_step(first, second, x_star)
    raise UnsupportedRuleError(
        f"CRPS is not defined between {type(first).__name__} and {type(second).__name__}"
    )


def crps(forecast: Forecast, x_star: float) -> float:
    """CRPS of a mixture (adaptive quadrature split at x*) or a step CDF (exact)."""
    return crps_cross(forecast, forecast, x_star)


#####################################
# Interval scores
#####################################


def interval_score(alpha: float, lower: float, upper: float, x_star: float) -> float:
    """Width of the central (1 - alpha) interval plus 2/alpha times the miss distance."""
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
    if lower > upper:
        raise InvalidParameterError(f"interval lower {lower} exceeds upper {upper}")
    score = upper - lower
    if x_star < lower:
        score += (2.0 / alpha) * (lower - x_star)
    elif x_star > upper:
        score += (2.0 / alpha) * (x_star - upper)
    return float(score)


@dataclass(frozen=True)
class IntervalSet:
    """A median and K central prediction intervals (alpha, lower, upper)."""

    median: float
    intervals: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        intervals = tuple((float(a), float(lo), float(hi)) for a, lo, hi in self.intervals)
        if not intervals:
            raise InvalidParameterError("an interval set needs at least one interval")
        alphas = [alpha for alpha, _, _ in intervals]
        if len(set(alphas)) != len(alphas):
            raise InvalidParameterError("interval alphas must be distinct")
        for alpha, lower, upper in intervals:
            if not 0 < alpha < 1:
                raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")
            if lower > upper:
                raise InvalidParameterError(f"interval at alpha={alpha} has lower {lower} > upper {upper}")
        object.__setattr__(self, "median", float(self.median))
        object.__setattr__(self, "intervals", intervals)

    @classmethod
    def from_quantiles(cls, q: QuantileForecast, tol: float = 1e-9) -> "IntervalSet":
        """Pair levels a and 1 - a into central intervals with alpha = 2a; needs the median."""
        levels = np.asarray(q.levels)
        values = np.asarray(q.values)
        middle = np.flatnonzero(np.abs(levels - 0.5) <= tol)
        if middle.size != 1:
            raise InvalidParameterError("quantile forecast has no median (level 0.5)")
        intervals = []
        for index, level in enumerate(levels):
            if level >= 0.5 - tol:
                continue
            partner = np.flatnonzero(np.abs(levels - (1.0 - level)) <= tol)
            if partner.size != 1:
                raise InvalidParameterError(f"level {level} has no symmetric partner {1.0 - level}")
            intervals.append((2.0 * level, values[index], values[partner[0]]))
        return cls(float(values[middle[0]]), tuple(intervals))

    @property
    def k(self) -> int:
        return len(self.intervals)


def wis(f: IntervalSet, x_star: float) -> float:
    """Weighted interval score with w_0 = 1/2 and w_k = alpha_k / 2."""
    total = 0.5 * abs(x_star - f.median)
    for alpha, lower, upper in f.intervals:
        total += (alpha / 2.0) * interval_score(alpha, lower, upper, x_star)
    return total / (f.k + 0.5)


#####################################
# Kolmogorov-Smirnov distance
#####################################


def _cdf_pair(F) -> tuple[Callable, Callable]:
    if hasattr(F, "cdf"):
        left = getattr(F, "cdf_left", F.cdf)
        return F.cdf, left
    if callable(F):
        scalar = np.vectorize(lambda x: float(F(x)))
        return scalar, scalar
    raise InvalidParameterError("F must be a callable CDF or expose cdf()")


def ks_stat(s: SampleForecast, F) -> float:
    """max over distinct draws of the gaps between F and the ECDF, at the draw and just left of it."""
    right, left = _cdf_pair(F)
    points = np.unique(s.values)
    model_right = np.asarray(right(points), dtype=float)
    model_left = np.asarray(left(points), dtype=float)
    sample_right = np.asarray(s.cdf(points), dtype=float)
    sample_left = np.asarray(s.cdf_left(points), dtype=float)
    gaps = np.maximum(np.abs(model_right - sample_right), np.abs(model_left - sample_left))
    return float(np.max(gaps))


#####################################
# Rule dispatch
#####################################


def central_interval(forecast: Union[Mixture, QuantileForecast], alpha: float) -> tuple[float, float]:
    """The (alpha/2, 1 - alpha/2) quantile pair of a mixture or a quantile forecast."""
    if isinstance(forecast, Mixture):
        lower, upper = forecast.quantile(np.array([alpha / 2.0, 1.0 - alpha / 2.0]))
        return float(lower), float(upper)
    try:
        return forecast.value_at(alpha / 2.0), forecast.value_at(1.0 - alpha / 2.0)
    except KeyError:
        raise UnsupportedRuleError(
            f"quantile forecast lacks levels {alpha / 2.0} and {1.0 - alpha / 2.0} for alpha={alpha}"
        ) from None


def score_forecast(forecast: Union[Forecast, QuantileForecast], x_star: float, rule: str,
                   levels: Sequence[float], alpha: float) -> float:
    """Score one forecast under a named rule; raises UnsupportedRuleError for invalid pairings."""
    if rule not in RULES:
        raise UnsupportedRuleError(f"unknown rule '{rule}'; choose from {', '.join(RULES)}")
    kind = type(forecast).__name__
    if rule == "logs":
        if isinstance(forecast, QuantileForecast):
            raise UnsupportedRuleError(f"rule 'logs' is not supported for {kind}")
        return log_score(forecast, x_star)
    if rule == "crps":
        if isinstance(forecast, QuantileForecast):
            raise UnsupportedRuleError(f"rule 'crps' is not supported for {kind}")
        return crps(forecast, x_star)
    if not isinstance(forecast, (Mixture, QuantileForecast)):
        raise UnsupportedRuleError(f"rule '{rule}' is not supported for {kind}")
    if rule == "is":
        lower, upper = central_interval(forecast, alpha)
        return interval_score(alpha, lower, upper, x_star)
    quantiles = quantiles_of(forecast, levels) if isinstance(forecast, Mixture) else forecast
    return wis(IntervalSet.from_quantiles(quantiles), x_star)
