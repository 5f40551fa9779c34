"""
distributions.py - parametric components and finite mixtures.

A Component is one parametric distribution from the hub family table,
optionally truncated to (lower, upper] and carrying its mixture weight.
A Mixture is an ordered tuple of Components whose weights sum to 1.

Both are immutable after construction. Parameters are validated when a
Component is built, never lazily at evaluation time.

Family parameters (param1, param2, param3):

    Beta     shape1, shape2          Cauchy   location, scale
    Lnorm    meanlog, sdlog          Logis    location, scale
    Unif     min, max                Lst      location, scale, df
    Weibull  shape, scale            Fd       df1, df2
    Norm     mean, sd                Chisq    df, [ncp]
    Gammad   scale, shape            Exp      rate
    Binom    size, prob              Dirac    location
    Pois     lambda                  Hyper    m, n, k
    Nbinom   n, p                    Geom     prob

Lst is location + scale * T(df). Geom and Nbinom count failures before
the first (n-th) success. Hyper counts white balls in k draws from an
urn of m white and n black balls.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Optional, Sequence, Union

# Import external packages
import numpy as np
from scipy import stats

# Import functions from local modules
from mixline.errors import BracketError, InvalidParameterError, WeightError
from utils.utils_logger import logger

#####################################
# Constants
#####################################

WEIGHT_TOL = 1e-9

# Bisection stops when the bracket is this narrow (relative to max(1, |x|)) ...
QUANTILE_XTOL = 1e-12
# ... or when the upper end is this close in probability.
QUANTILE_PTOL = 1e-12
_MAX_BISECTIONS = 400
_MAX_BRACKET_EXPANSIONS = 200

ArrayLike = Union[float, Sequence[float], np.ndarray]


#####################################
# Families
#####################################


class Family(str, Enum):
    """Distribution family tags accepted in a mixture submission."""

    BETA = "Beta"
    CAUCHY = "Cauchy"
    LNORM = "Lnorm"
    LOGIS = "Logis"
    UNIF = "Unif"
    LST = "Lst"
    WEIBULL = "Weibull"
    FD = "Fd"
    NORM = "Norm"
    CHISQ = "Chisq"
    GAMMAD = "Gammad"
    EXP = "Exp"
    BINOM = "Binom"
    DIRAC = "Dirac"
    POIS = "Pois"
    HYPER = "Hyper"
    NBINOM = "Nbinom"
    GEOM = "Geom"

    @classmethod
    def parse(cls, tag: str) -> "Family":
        """Look up a family by tag, ignoring case and surrounding blanks."""
        lookup = {family.value.lower(): family for family in cls}
        try:
            return lookup[str(tag).strip().lower()]
        except KeyError:
            raise InvalidParameterError(f"unknown distribution family '{tag}'") from None


class _PointMass:
    """Frozen-distribution interface for the Dirac family."""

    def __init__(self, location: float):
        self.location = location

    def pmf(self, x):
        return np.where(np.asarray(x, dtype=float) == self.location, 1.0, 0.0)

    def cdf(self, x):
        return np.where(np.asarray(x, dtype=float) >= self.location, 1.0, 0.0)

    def ppf(self, q):
        return np.full(np.shape(q), self.location, dtype=float)


def _positive(**values: float) -> Optional[str]:
    for name, value in values.items():
        if not value > 0:
            return f"{name} must be > 0, got {value}"
    return None


def _count(**values: float) -> Optional[str]:
    for name, value in values.items():
        if value < 0 or value != math.floor(value):
            return f"{name} must be a nonnegative integer, got {value}"
    return None


def _probability(name: str, value: float, allow_zero: bool) -> Optional[str]:
    low_ok = value >= 0 if allow_zero else value > 0
    if not (low_ok and value <= 1):
        return f"{name} must be in {'[0' if allow_zero else '(0'}, 1], got {value}"
    return None


def _check_hyper(m: float, n: float, k: float) -> Optional[str]:
    problem = _count(m=m, n=n, k=k)
    if problem is None and k > m + n:
        problem = f"k must not exceed m + n, got k={k}, m + n={m + n}"
    return problem


def _check_unif(low: float, high: float) -> Optional[str]:
    if not low < high:
        return f"min must be < max, got min={low}, max={high}"
    return None


@dataclass(frozen=True)
class FamilySpec:
    """Parameter names, arity, support type and scipy builder for one family."""

    params: tuple[str, ...]
    required: int
    discrete: bool
    location: bool
    build: Callable[..., object]
    check: Callable[..., Optional[str]]


def _build_chisq(df: float, ncp: Optional[float] = None):
    if ncp is None or ncp == 0:
        return stats.chi2(df)
    return stats.ncx2(df, ncp)


def _check_chisq(df: float, ncp: Optional[float] = None) -> Optional[str]:
    problem = _positive(df=df)
    if problem is None and ncp is not None and ncp < 0:
        problem = f"ncp must be >= 0, got {ncp}"
    return problem


FAMILY_SPECS: dict[Family, FamilySpec] = {
    Family.BETA: FamilySpec(
        ("shape1", "shape2"), 2, False, False,
        lambda a, b: stats.beta(a, b),
        lambda a, b: _positive(shape1=a, shape2=b),
    ),
    Family.CAUCHY: FamilySpec(
        ("location", "scale"), 2, False, True,
        lambda loc, scale: stats.cauchy(loc=loc, scale=scale),
        lambda loc, scale: _positive(scale=scale),
    ),
    Family.LNORM: FamilySpec(
        ("meanlog", "sdlog"), 2, False, False,
        lambda meanlog, sdlog: stats.lognorm(s=sdlog, scale=math.exp(meanlog)),
        lambda meanlog, sdlog: _positive(sdlog=sdlog),
    ),
    Family.LOGIS: FamilySpec(
        ("location", "scale"), 2, False, True,
        lambda loc, scale: stats.logistic(loc=loc, scale=scale),
        lambda loc, scale: _positive(scale=scale),
    ),
    Family.UNIF: FamilySpec(
        ("min", "max"), 2, False, True,
        lambda low, high: stats.uniform(loc=low, scale=high - low),
        _check_unif,
    ),
    Family.LST: FamilySpec(
        ("location", "scale", "df"), 3, False, True,
        lambda loc, scale, df: stats.t(df, loc=loc, scale=scale),
        lambda loc, scale, df: _positive(scale=scale, df=df),
    ),
    Family.WEIBULL: FamilySpec(
        ("shape", "scale"), 2, False, False,
        lambda shape, scale: stats.weibull_min(shape, scale=scale),
        lambda shape, scale: _positive(shape=shape, scale=scale),
    ),
    Family.FD: FamilySpec(
        ("df1", "df2"), 2, False, False,
        lambda df1, df2: stats.f(df1, df2),
        lambda df1, df2: _positive(df1=df1, df2=df2),
    ),
    Family.NORM: FamilySpec(
        ("mean", "sd"), 2, False, True,
        lambda mean, sd: stats.norm(loc=mean, scale=sd),
        lambda mean, sd: _positive(sd=sd),
    ),
    Family.CHISQ: FamilySpec(("df", "ncp"), 1, False, False, _build_chisq, _check_chisq),
    Family.GAMMAD: FamilySpec(
        ("scale", "shape"), 2, False, False,
        lambda scale, shape: stats.gamma(shape, scale=scale),
        lambda scale, shape: _positive(scale=scale, shape=shape),
    ),
    Family.EXP: FamilySpec(
        ("rate",), 1, False, False,
        lambda rate: stats.expon(scale=1.0 / rate),
        lambda rate: _positive(rate=rate),
    ),
    Family.BINOM: FamilySpec(
        ("size", "prob"), 2, True, False,
        lambda size, prob: stats.binom(int(size), prob),
        lambda size, prob: _count(size=size) or _probability("prob", prob, allow_zero=True),
    ),
    Family.DIRAC: FamilySpec(("location",), 1, True, True, _PointMass, lambda loc: None),
    Family.POIS: FamilySpec(
        ("lambda",), 1, True, False,
        lambda lam: stats.poisson(lam),
        lambda lam: _positive(**{"lambda": lam}),
    ),
    Family.HYPER: FamilySpec(
        ("m", "n", "k"), 3, True, False,
        lambda m, n, k: stats.hypergeom(int(m + n), int(m), int(k)),
        _check_hyper,
    ),
    Family.NBINOM: FamilySpec(
        ("n", "p"), 2, True, False,
        lambda n, p: stats.nbinom(n, p),
        lambda n, p: _positive(n=n) or _probability("p", p, allow_zero=False),
    ),
    Family.GEOM: FamilySpec(
        ("prob",), 1, True, False,
        lambda prob: stats.geom(prob, loc=-1),
        lambda prob: _probability("prob", prob, allow_zero=False),
    ),
}


#####################################
# Helpers
#####################################


def _finite(x: ArrayLike, name: str = "x") -> np.ndarray:
    values = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(values)):
        raise InvalidParameterError(f"{name} must be finite")
    return values


def as_output(values: np.ndarray, like: ArrayLike):
    """Return a float for scalar input, an array otherwise."""
    if np.ndim(like) == 0:
        return float(np.asarray(values).reshape(()))
    return np.asarray(values, dtype=float)


def _optional_float(value: Optional[float]) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    return None if math.isnan(value) else value


#####################################
# Component
#####################################


@dataclass(frozen=True)
class Component:
    """One parametric distribution of a mixture, optionally truncated to (lower, upper]."""

    family: Family
    param1: float
    param2: Optional[float] = None
    param3: Optional[float] = None
    lower: Optional[float] = None
    upper: Optional[float] = None
    weight: float = 1.0
    _dist: object = field(default=None, init=False, repr=False, compare=False)
    _cdf_lower: float = field(default=0.0, init=False, repr=False, compare=False)
    _mass: float = field(default=1.0, init=False, repr=False, compare=False)

    def __post_init__(self):
        family = self.family if isinstance(self.family, Family) else Family.parse(self.family)
        object.__setattr__(self, "family", family)
        spec = FAMILY_SPECS[family]

        params = [_optional_float(self.param1), _optional_float(self.param2), _optional_float(self.param3)]
        for name, value in zip(("param1", "param2", "param3"), params):
            object.__setattr__(self, name, value)
            if value is not None and not math.isfinite(value):
                raise InvalidParameterError(f"{family.value}: {name} must be finite")

        given = [value for value in params if value is not None]
        if params[0] is None or any(params[i] is None for i in range(spec.required)):
            raise InvalidParameterError(
                f"{family.value} requires {spec.required} parameter(s) ({', '.join(spec.params[:spec.required])})"
            )
        if len(given) > len(spec.params) or any(params[i] is not None for i in range(len(spec.params), 3)):
            raise InvalidParameterError(
                f"{family.value} takes at most {len(spec.params)} parameter(s) ({', '.join(spec.params)})"
            )
        args = [value for value in params[: len(spec.params)] if value is not None]
        problem = spec.check(*args)
        if problem:
            raise InvalidParameterError(f"{family.value}: {problem}")

        weight = float(self.weight)
        if not (weight > 0 and weight <= 1 + WEIGHT_TOL):
            raise WeightError(f"component weight must be in (0, 1], got {weight}")
        object.__setattr__(self, "weight", weight)

        lower, upper = _optional_float(self.lower), _optional_float(self.upper)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower is not None and upper is not None and not lower < upper:
            raise InvalidParameterError(f"truncation needs lower < upper, got ({lower}, {upper}]")

        dist = spec.build(*args)
        cdf_lower = float(dist.cdf(lower)) if lower is not None else 0.0
        cdf_upper = float(dist.cdf(upper)) if upper is not None else 1.0
        mass = cdf_upper - cdf_lower
        if self.is_truncated and not mass > 0:
            raise InvalidParameterError(
                f"{family.value} has no probability mass on ({lower}, {upper}]"
            )
        object.__setattr__(self, "_dist", dist)
        object.__setattr__(self, "_cdf_lower", cdf_lower)
        object.__setattr__(self, "_mass", mass)

    @property
    def spec(self) -> FamilySpec:
        return FAMILY_SPECS[self.family]

    @property
    def is_discrete(self) -> bool:
        return self.spec.discrete

    @property
    def is_truncated(self) -> bool:
        return self.lower is not None or self.upper is not None

    @property
    def params(self) -> tuple[float, ...]:
        return tuple(p for p in (self.param1, self.param2, self.param3) if p is not None)

    def with_weight(self, weight: float) -> "Component":
        return replace(self, weight=weight)

    def shifted(self, offset: float) -> "Component":
        """Translate a location family (and its truncation limits) by offset."""
        if not self.spec.location:
            raise InvalidParameterError(f"{self.family.value} is not a location family")
        changes = {"param1": self.param1 + offset}
        if self.family is Family.UNIF:
            changes["param2"] = self.param2 + offset
        if self.lower is not None:
            changes["lower"] = self.lower + offset
        if self.upper is not None:
            changes["upper"] = self.upper + offset
        return replace(self, **changes)

    def _inside(self, x: np.ndarray) -> np.ndarray:
        inside = np.ones(np.shape(x), dtype=bool)
        if self.lower is not None:
            inside &= x > self.lower
        if self.upper is not None:
            inside &= x <= self.upper
        return inside

    def pdf(self, x: ArrayLike) -> np.ndarray:
        """Density (pmf for discrete families), renormalized under truncation."""
        x = np.asarray(x, dtype=float)
        dens = self._dist.pmf(x) if self.is_discrete else self._dist.pdf(x)
        if self.is_truncated:
            dens = np.where(self._inside(x), dens / self._mass, 0.0)
        return np.asarray(dens, dtype=float)

    def cdf(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        raw = np.asarray(self._dist.cdf(x), dtype=float)
        if not self.is_truncated:
            return raw
        out = np.clip((raw - self._cdf_lower) / self._mass, 0.0, 1.0)
        if self.lower is not None:
            out = np.where(x <= self.lower, 0.0, out)
        if self.upper is not None:
            out = np.where(x >= self.upper, 1.0, out)
        return out

    def cdf_left(self, x: ArrayLike) -> np.ndarray:
        """P(X < x); differs from cdf only at jump points of discrete families."""
        if not self.is_discrete:
            return self.cdf(x)
        return np.clip(self.cdf(x) - self.pdf(x), 0.0, 1.0)

    def ppf(self, q: ArrayLike) -> np.ndarray:
        """Quantile function, applied through the truncated CDF when limits are set."""
        q = np.asarray(q, dtype=float)
        if not self.is_truncated:
            return np.asarray(self._dist.ppf(q), dtype=float)
        out = np.asarray(self._dist.ppf(self._cdf_lower + q * self._mass), dtype=float)
        low = -np.inf if self.lower is None else self.lower
        high = np.inf if self.upper is None else self.upper
        return np.clip(out, low, high)

    def support_points(self, low: float, high: float, limit: int = 10_000) -> np.ndarray:
        """Jump locations of a discrete component inside [low, high]."""
        if not self.is_discrete:
            return np.empty(0)
        if self.family is Family.DIRAC:
            points = np.array([self.param1])
        else:
            first = max(math.ceil(low), float(self.ppf(1e-12)))
            last = min(math.floor(high), float(self.ppf(1.0 - 1e-12)))
            if last < first:
                return np.empty(0)
            if last - first > limit:
                logger.warning(
                    f"{self.family.value} support on [{low}, {high}] exceeds {limit} points; truncating the list"
                )
                last = first + limit
            points = np.arange(first, last + 1.0)
        points = points[(points >= low) & (points <= high)]
        return points[self._inside(points)]


#####################################
# Mixture
#####################################


@dataclass(frozen=True)
class Mixture:
    """A finite mixture: p(x) = sum_c w_c p_c(x) with positive weights summing to 1."""

    components: tuple[Component, ...]

    def __post_init__(self):
        components = tuple(self.components)
        if not components:
            raise InvalidParameterError("a mixture needs at least one component")
        for component in components:
            if not isinstance(component, Component):
                raise InvalidParameterError(f"expected Component, got {type(component).__name__}")
        total = math.fsum(component.weight for component in components)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise WeightError(f"component weights sum to {total!r}, expected 1")
        object.__setattr__(self, "components", components)

    @classmethod
    def from_components(cls, components: Iterable[Component], normalize: bool = False) -> "Mixture":
        """Build a mixture, optionally rescaling the weights to sum to exactly 1."""
        components = list(components)
        if normalize and components:
            total = math.fsum(component.weight for component in components)
            if not total > 0:
                raise WeightError("cannot normalize weights that sum to zero")
            components = [component.with_weight(component.weight / total) for component in components]
        return cls(tuple(components))

    @classmethod
    def single(cls, family: Union[Family, str], *params: float,
               lower: Optional[float] = None, upper: Optional[float] = None) -> "Mixture":
        """A one-component mixture, e.g. Mixture.single("Norm", 0, 1)."""
        return cls((Component(family, *params, lower=lower, upper=upper, weight=1.0),))

    def __len__(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([component.weight for component in self.components])

    @property
    def is_continuous(self) -> bool:
        return not any(component.is_discrete for component in self.components)

    def pdf(self, x: ArrayLike):
        values = _finite(x)
        total = sum(component.weight * component.pdf(values) for component in self.components)
        return as_output(total, x)

    def logpdf(self, x: ArrayLike):
        with np.errstate(divide="ignore"):
            return as_output(np.log(np.asarray(self.pdf(x), dtype=float)), x)

    def cdf(self, x: ArrayLike):
        values = _finite(x)
        total = sum(component.weight * component.cdf(values) for component in self.components)
        return as_output(np.clip(total, 0.0, 1.0), x)

    def cdf_left(self, x: ArrayLike):
        values = _finite(x)
        total = sum(component.weight * component.cdf_left(values) for component in self.components)
        return as_output(np.clip(total, 0.0, 1.0), x)

    def support_points(self, low: float, high: float) -> np.ndarray:
        """Sorted jump locations of the discrete components inside [low, high]."""
        parts = [component.support_points(low, high) for component in self.components]
        return np.unique(np.concatenate(parts)) if parts else np.empty(0)

    def quantile(self, p: ArrayLike):
        """Generalized inverse inf{x : cdf(x) >= p} by bracketing and bisection."""
        probs = np.asarray(p, dtype=float)
        if np.any(~np.isfinite(probs)) or np.any((probs <= 0) | (probs >= 1)):
            raise InvalidParameterError("quantile levels must lie strictly inside (0, 1)")
        flat = probs.reshape(-1)
        return as_output(self._invert(flat).reshape(probs.shape), p)

    def _invert(self, p: np.ndarray) -> np.ndarray:
        candidates = np.array([component.ppf(p) for component in self.components])
        if not np.all(np.isfinite(candidates)):
            raise BracketError("component quantiles are not finite; cannot bracket")
        lo = candidates.min(axis=0)
        hi = candidates.max(axis=0)
        width = np.maximum(hi - lo, 1e-9 * np.maximum(1.0, np.abs(hi)))

        # Invariant after bracketing: cdf(lo) < p <= cdf(hi).
        step = width.copy()
        for _ in range(_MAX_BRACKET_EXPANSIONS):
            short = np.asarray(self.cdf(hi)) < p
            if not short.any():
                break
            hi = np.where(short, hi + step, hi)
            step = np.where(short, 2 * step, step)
        else:
            raise BracketError("could not find an upper bracket for the quantile")
        step = width.copy()
        for _ in range(_MAX_BRACKET_EXPANSIONS):
            long = np.asarray(self.cdf(lo)) >= p
            if not long.any():
                break
            lo = np.where(long, lo - step, lo)
            step = np.where(long, 2 * step, step)
        else:
            raise BracketError("could not find a lower bracket for the quantile")

        cdf_hi = np.asarray(self.cdf(hi))
        for _ in range(_MAX_BISECTIONS):
            active = (hi - lo > QUANTILE_XTOL * np.maximum(1.0, np.abs(hi))) & (cdf_hi - p > QUANTILE_PTOL)
            if not active.any():
                break
            mid = 0.5 * (lo + hi)
            cdf_mid = np.asarray(self.cdf(mid))
            move_hi = active & (cdf_mid >= p)
            move_lo = active & ~(cdf_mid >= p)
            hi = np.where(move_hi, mid, hi)
            cdf_hi = np.where(move_hi, cdf_mid, cdf_hi)
            lo = np.where(move_lo, mid, lo)

        # Snap onto an exact component quantile when it satisfies the definition.
        result = hi.copy()
        for row in candidates:
            ok = (row > lo) & (row < result) & (np.asarray(self.cdf(row)) >= p)
            result = np.where(ok, row, result)
        return result

    def sample(self, n: int, seed: int) -> np.ndarray:
        """Draw n values: pick a component by weight, then invert its CDF."""
        if int(n) < 1:
            raise InvalidParameterError(f"sample size must be >= 1, got {n}")
        n = int(n)
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(self.components), size=n, p=self.weights)
        uniforms = rng.random(n)
        uniforms = np.where(uniforms == 0.0, np.finfo(float).tiny, uniforms)
        draws = np.empty(n)
        for index, component in enumerate(self.components):
            mask = chosen == index
            if mask.any():
                draws[mask] = component.ppf(uniforms[mask])
        return draws

    def shifted(self, offset: float) -> "Mixture":
        return Mixture(tuple(component.shifted(offset) for component in self.components))


#####################################
# Ensemble of mixtures
#####################################


def flatten(outer: Sequence[tuple[Mixture, float]]) -> Mixture:
    """Collapse a weighted list of mixtures into one mixture with product weights."""
    pairs = list(outer)
    if not pairs:
        raise InvalidParameterError("flatten needs at least one (mixture, weight) pair")
    weights = np.array([float(weight) for _, weight in pairs])
    if np.any(~np.isfinite(weights)) or np.any(weights <= 0):
        raise WeightError("outer weights must be positive")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise WeightError(f"outer weights sum to {total!r}, expected 1")
    components = [
        component.with_weight(component.weight * weight)
        for (mixture, _), weight in zip(pairs, weights)
        for component in mixture.components
    ]
    logger.debug(f"Flattened {len(pairs)} mixtures into {len(components)} components.")
    return Mixture.from_components(components, normalize=True)
