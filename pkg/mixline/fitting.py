"""
fitting.py - fit normal mixtures to bin, quantile and sample forecasts.

Bin and quantile fits work on an unconstrained vector

    gamma = (mu_1, alpha_1..alpha_{C-1}, eta, nu_2..nu_C)

which decodes to ordered means mu_c = mu_{c-1} + exp(alpha_{c-1}), a
common standard deviation sigma = exp(eta) and softmax weights with
nu_1 fixed at 0. With shared_sigma=False there is one eta per component.

Each outer iteration minimizes the objective along every coordinate of
gamma in turn, holding the others at their incumbent values, then keeps
only the single best coordinate update. The loop ends when the
relative objective change drops below rel_tol or the outer budget runs
out.

Sample fits use standard EM with a free standard deviation per component.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

# Import external packages
import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp, ndtr
from scipy.stats import norm

# Import functions from local modules
from mixline.distributions import Component, Family, Mixture
from mixline.errors import FittingError, InsufficientDataError, InvalidParameterError
from mixline.representations import BinForecast, QuantileForecast, SampleForecast
from utils.utils_logger import logger

#####################################
# Constants
#####################################

_EXP_CLIP = 700.0
_PROB_FLOOR = 1e-300
_OBJECTIVE_FLOOR = 1e-15
_LOCATION_HALF_WIDTH = 4.0
_LOG_HALF_WIDTH = 4.0
_MAX_EXPANSIONS = 8
NEST_OFFSET = 1e-6


#####################################
# Configuration and parameters
#####################################


@dataclass(frozen=True)
class FitConfig:
    """Settings for bin and quantile fits."""

    components: int = 1
    shared_sigma: bool = True
    rel_tol: float = 1e-3
    max_outer_iter: int = 500
    coordinate_max_iter: int = 200
    coordinate_tol: float = 1e-8

    def __post_init__(self):
        if int(self.components) < 1:
            raise InvalidParameterError(f"components must be >= 1, got {self.components}")
        if not self.rel_tol > 0:
            raise InvalidParameterError(f"rel_tol must be > 0, got {self.rel_tol}")
        if int(self.max_outer_iter) < 1:
            raise InvalidParameterError(f"max_outer_iter must be >= 1, got {self.max_outer_iter}")

    @property
    def n_params(self) -> int:
        c = self.components
        return 2 * c if self.shared_sigma else 3 * c - 1


def _clipped_exp(x):
    return np.exp(np.clip(x, -_EXP_CLIP, _EXP_CLIP))


@dataclass(frozen=True)
class FitParams:
    """Unconstrained parameters of a C-component normal mixture.

    eta holds one entry for a shared standard deviation or C entries otherwise.
    """

    mu1: float
    alpha: tuple[float, ...]
    eta: tuple[float, ...]
    nu: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "mu1", float(self.mu1))
        for name in ("alpha", "eta", "nu"):
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        c = len(self.alpha) + 1
        if len(self.nu) != c - 1:
            raise InvalidParameterError(f"{c} components need {c - 1} weight logits, got {len(self.nu)}")
        if len(self.eta) not in (1, c):
            raise InvalidParameterError(f"{c} components need 1 or {c} log standard deviations, got {len(self.eta)}")

    @property
    def components(self) -> int:
        return len(self.alpha) + 1

    @property
    def shared_sigma(self) -> bool:
        return len(self.eta) == 1

    @property
    def means(self) -> np.ndarray:
        return self.mu1 + np.concatenate(([0.0], np.cumsum(_clipped_exp(np.asarray(self.alpha)))))

    @property
    def sigmas(self) -> np.ndarray:
        sigmas = _clipped_exp(np.asarray(self.eta))
        return np.full(self.components, sigmas[0]) if self.shared_sigma else sigmas

    @property
    def weights(self) -> np.ndarray:
        logits = np.concatenate(([0.0], np.asarray(self.nu)))
        return np.exp(logits - logsumexp(logits))

    def decode(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(means, sigmas, weights)"""
        return self.means, self.sigmas, self.weights

    @classmethod
    def encode(cls, means: Sequence[float], sigmas: Sequence[float], weights: Sequence[float],
               shared_sigma: bool = True) -> "FitParams":
        means = np.asarray(means, dtype=float)
        sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
        weights = np.asarray(weights, dtype=float)
        if means.size == 0 or weights.size != means.size:
            raise InvalidParameterError("means and weights must be nonempty and of equal length")
        if np.any(np.diff(means) <= 0):
            raise InvalidParameterError("means must be strictly increasing")
        if np.any(sigmas <= 0) or np.any(weights <= 0):
            raise InvalidParameterError("standard deviations and weights must be positive")
        eta = (math.log(sigmas[0]),) if shared_sigma else tuple(np.log(np.broadcast_to(sigmas, means.shape)))
        return cls(
            mu1=means[0],
            alpha=tuple(np.log(np.diff(means))),
            eta=eta,
            nu=tuple(np.log(weights[1:] / weights[0])),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate(([self.mu1], self.alpha, self.eta, self.nu))

    @classmethod
    def from_vector(cls, gamma: Sequence[float], components: int, shared_sigma: bool = True) -> "FitParams":
        gamma = np.asarray(gamma, dtype=float)
        c = components
        n_eta = 1 if shared_sigma else c
        if gamma.size != c + n_eta + (c - 1):
            raise InvalidParameterError(f"expected {c + n_eta + c - 1} coordinates, got {gamma.size}")
        return cls(
            mu1=gamma[0],
            alpha=tuple(gamma[1:c]),
            eta=tuple(gamma[c:c + n_eta]),
            nu=tuple(gamma[c + n_eta:]),
        )

    def to_mixture(self) -> Mixture:
        means, sigmas, weights = self.decode()
        keep = weights > 0
        if not keep.all():
            logger.debug(f"Dropping {int((~keep).sum())} components whose weight underflowed to zero")
        components = [
            Component(Family.NORM, mean, sigma, weight=weight)
            for mean, sigma, weight in zip(means[keep], sigmas[keep], weights[keep])
        ]
        return Mixture.from_components(components, normalize=True)

    def nested(self, shared_sigma: Optional[bool] = None) -> "FitParams":
        """C+1 parameters describing nearly the same mixture: the heaviest component split in two."""
        means, sigmas, weights = self.decode()
        split = int(np.argmax(weights))
        gaps = np.diff(means)
        neighbours = [gaps[i] for i in (split - 1, split) if 0 <= i < gaps.size]
        offset = NEST_OFFSET * sigmas[split]
        if neighbours:
            offset = min(offset, 0.25 * min(neighbours))
        means = np.concatenate((means[:split], [means[split] - offset, means[split] + offset], means[split + 1:]))
        sigmas = np.concatenate((sigmas[:split], [sigmas[split]] * 2, sigmas[split + 1:]))
        weights = np.concatenate((weights[:split], [weights[split] / 2] * 2, weights[split + 1:]))
        shared = self.shared_sigma if shared_sigma is None else shared_sigma
        return FitParams.encode(means, sigmas, weights, shared_sigma=shared)


@dataclass(frozen=True)
class FitReport:
    """Outcome of one fit. objective_trace starts at the initial value."""

    fitted: Mixture
    params: Optional[FitParams]
    objective_trace: tuple[float, ...]
    converged: bool
    iterations: int
    objective_name: str = field(default="kld")

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def components(self) -> int:
        return len(self.fitted.components)


#####################################
# Objectives
#####################################


def _interval_masses(edges: np.ndarray, means: np.ndarray, sigmas: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """P(M in [b_{i-1}, b_i)) for a normal mixture, using upper tails above each mean."""
    z = (edges[:, None] - means[None, :]) / sigmas[None, :]
    low, high = z[:-1], z[1:]
    lower_tail = ndtr(high) - ndtr(low)
    upper_tail = ndtr(-low) - ndtr(-high)
    per_component = np.where(low > 0, upper_tail, lower_tail)
    return np.clip(per_component, 0.0, None) @ weights


def _normal_mixture_cdf(x: np.ndarray, means: np.ndarray, sigmas: np.ndarray, weights: np.ndarray) -> np.ndarray:
    return ndtr((x[:, None] - means[None, :]) / sigmas[None, :]) @ weights


def _kld_from_masses(probs: np.ndarray, masses: np.ndarray, floor: Optional[float]) -> float:
    positive = probs > 0
    model = masses[positive]
    if floor is not None:
        model = np.maximum(model, floor)
    elif np.any(model <= 0):
        return math.inf
    return float(np.sum(probs[positive] * np.log(probs[positive] / model)))


def kld(f: BinForecast, m: Mixture) -> float:
    """sum over bins with p_i > 0 of p_i log(p_i / P(m in B_i)); +inf if such a bin has no model mass."""
    edges = np.asarray(f.edges)
    masses = np.diff(np.asarray(m.cdf(edges), dtype=float))
    return max(_kld_from_masses(np.asarray(f.probs), masses, floor=None), 0.0)


def ss_quantiles(q: QuantileForecast, m: Mixture) -> float:
    """sum_i (alpha_i - F_m(q_i))^2"""
    residuals = np.asarray(q.levels) - np.asarray(m.cdf(np.asarray(q.values)), dtype=float)
    return float(np.sum(residuals**2))


def prob_in_true_bin(m: Mixture, f: BinForecast, x_star: float) -> float:
    """Mass m places on the bin of f that contains x* (0 when x* is outside the bins)."""
    index = f.bin_index(x_star)
    if index is None:
        return 0.0
    left, right = f.edges[index], f.edges[index + 1]
    return float(m.cdf_left(right) - m.cdf_left(left))


#####################################
# Coordinate descent
#####################################


def _line_search(objective: Callable[[np.ndarray], float], gamma: np.ndarray, index: int,
                 half_width: float, cfg: FitConfig) -> tuple[float, float]:
    """Minimize along one coordinate starting from its incumbent; the bracket grows on boundary hits."""
    def along(value: float) -> float:
        trial = gamma.copy()
        trial[index] = value
        return objective(trial)

    best_x, best_value = gamma[index], along(gamma[index])
    centre, width = gamma[index], half_width
    for _ in range(_MAX_EXPANSIONS):
        result = minimize_scalar(
            along, bounds=(centre - width, centre + width), method="bounded",
            options={"xatol": cfg.coordinate_tol, "maxiter": cfg.coordinate_max_iter},
        )
        if result.fun < best_value:
            best_x, best_value = float(result.x), float(result.fun)
        at_edge = abs(abs(result.x - centre) - width) < 1e-3 * width
        if not at_edge:
            break
        centre, width = float(result.x), 2.0 * width
    return best_x, best_value


def _coordinate_descent(objective: Callable[[np.ndarray], float], gamma: np.ndarray, cfg: FitConfig,
                        location_scale: Callable[[np.ndarray], float]) -> tuple[np.ndarray, list[float], bool, int]:
    value = objective(gamma)
    if not math.isfinite(value):
        raise FittingError("objective is not finite at the initial parameters")
    trace = [value]
    for iteration in range(1, cfg.max_outer_iter + 1):
        best = None
        for index in range(gamma.size):
            half_width = _LOCATION_HALF_WIDTH * location_scale(gamma) if index == 0 else _LOG_HALF_WIDTH
            x, candidate = _line_search(objective, gamma, index, half_width, cfg)
            # Strict comparison keeps the lowest index on ties.
            if candidate < value and (best is None or candidate < best[1]):
                best = (x, candidate, index)
        if best is None:
            logger.debug(f"No coordinate improves the objective after {iteration - 1} outer iterations")
            return gamma, trace, True, iteration - 1
        gamma = gamma.copy()
        gamma[best[2]] = best[0]
        previous, value = value, best[1]
        trace.append(value)
        if value <= _OBJECTIVE_FLOOR or abs(previous - value) / previous < cfg.rel_tol:
            return gamma, trace, True, iteration
    return gamma, trace, False, cfg.max_outer_iter


def _run_fit(objective: Callable[[np.ndarray], float], start: FitParams, cfg: FitConfig,
             name: str) -> FitReport:
    shared = start.shared_sigma
    c = start.components

    def location_scale(gamma: np.ndarray) -> float:
        return float(np.mean(FitParams.from_vector(gamma, c, shared).sigmas))

    gamma, trace, converged, iterations = _coordinate_descent(objective, start.to_vector(), cfg, location_scale)
    params = FitParams.from_vector(gamma, c, shared)
    if not converged:
        logger.warning(f"{name} fit with C={c} did not converge in {cfg.max_outer_iter} outer iterations")
    logger.debug(f"{name} fit with C={c}: {trace[0]:.6g} -> {trace[-1]:.6g} in {iterations} iterations")
    return FitReport(params.to_mixture(), params, tuple(trace), converged, iterations, name)


#####################################
# Initialization
#####################################


def initial_params(center: float, q10: float, q90: float, sd: float, cfg: FitConfig) -> FitParams:
    """Means evenly spaced on [q10, q90] (the center when C=1), sigma = sd / C, equal weights."""
    c = cfg.components
    sd = sd if sd > 0 and math.isfinite(sd) else 1.0
    if c == 1:
        means = np.array([center])
    else:
        if not q90 > q10:
            q10, q90 = center - sd, center + sd
        means = np.linspace(q10, q90, c)
    sigmas = np.full(c, sd / c)
    return FitParams.encode(means, sigmas, np.full(c, 1.0 / c), shared_sigma=cfg.shared_sigma)


def _bin_start(f: BinForecast, cfg: FitConfig) -> FitParams:
    probs = np.asarray(f.probs)
    mids = f.midpoints
    mean = float(probs @ mids)
    sd = math.sqrt(max(float(probs @ (mids - mean) ** 2), 0.0))
    cumulative = np.concatenate(([0.0], np.cumsum(probs)))
    q10, q90 = np.interp([0.1, 0.9], cumulative, f.edges)
    return initial_params(mean, float(q10), float(q90), sd, cfg)


def _quantile_start(q: QuantileForecast, cfg: FitConfig) -> FitParams:
    levels = np.asarray(q.levels)
    values = np.asarray(q.values)
    center, q10, q25, q75, q90 = np.interp([0.5, 0.1, 0.25, 0.75, 0.9], levels, values)
    sd = (q75 - q25) / 1.349 if levels[0] <= 0.25 and levels[-1] >= 0.75 else float(np.std(values))
    return initial_params(float(center), float(q10), float(q90), float(sd), cfg)


def _check_init(init: FitParams, cfg: FitConfig) -> None:
    shared_mismatch = cfg.components > 1 and init.shared_sigma != cfg.shared_sigma
    if init.components != cfg.components or shared_mismatch:
        raise InvalidParameterError(
            f"initial parameters describe C={init.components} (shared sigma {init.shared_sigma}), "
            f"config asks for C={cfg.components} (shared sigma {cfg.shared_sigma})"
        )


#####################################
# Bin and quantile fits
#####################################


def fit_bins(f: BinForecast, cfg: FitConfig = FitConfig(), init: Optional[FitParams] = None) -> FitReport:
    """Minimize the KLD from the bin probabilities to a C-component normal mixture."""
    probs = np.asarray(f.probs)
    nonzero = int(np.count_nonzero(probs))
    if nonzero <= cfg.components:
        raise InsufficientDataError(f"{nonzero} nonzero bins cannot support a {cfg.components}-component fit")
    start = init if init is not None else _bin_start(f, cfg)
    _check_init(start, cfg)
    edges = np.asarray(f.edges)
    c, shared = cfg.components, cfg.shared_sigma

    def objective(gamma: np.ndarray) -> float:
        means, sigmas, weights = FitParams.from_vector(gamma, c, shared).decode()
        return _kld_from_masses(probs, _interval_masses(edges, means, sigmas, weights), floor=_PROB_FLOOR)

    return _run_fit(objective, start, cfg, "kld")


def fit_quantiles(q: QuantileForecast, cfg: FitConfig = FitConfig(),
                  init: Optional[FitParams] = None) -> FitReport:
    """Minimize sum_i (alpha_i - F(q_i))^2 over C-component normal mixtures."""
    if len(q) < cfg.n_params + 1:
        raise InsufficientDataError(
            f"{len(q)} quantiles cannot support a fit with {cfg.n_params} parameters (need {cfg.n_params + 1})"
        )
    start = init if init is not None else _quantile_start(q, cfg)
    _check_init(start, cfg)
    levels = np.asarray(q.levels)
    values = np.asarray(q.values)
    c, shared = cfg.components, cfg.shared_sigma

    def objective(gamma: np.ndarray) -> float:
        means, sigmas, weights = FitParams.from_vector(gamma, c, shared).decode()
        return float(np.sum((levels - _normal_mixture_cdf(values, means, sigmas, weights)) ** 2))

    return _run_fit(objective, start, cfg, "ss")


def _sweep(fit: Callable, forecast, max_components: int, cfg: FitConfig) -> dict[int, FitReport]:
    reports: dict[int, FitReport] = {}
    init = None
    for c in range(1, max_components + 1):
        step_cfg = replace(cfg, components=c)
        try:
            report = fit(forecast, step_cfg, init)
        except InsufficientDataError as e:
            if not reports:
                raise
            logger.warning(f"Sweep stopped at C={c}: {e}")
            break
        reports[c] = report
        init = report.params.nested(cfg.shared_sigma)
    return reports


def fit_bins_sweep(f: BinForecast, max_components: int, cfg: FitConfig = FitConfig()) -> dict[int, FitReport]:
    """Fits for C = 1..max_components, each started from the previous solution with one component split."""
    return _sweep(fit_bins, f, max_components, cfg)


def fit_quantiles_sweep(q: QuantileForecast, max_components: int,
                        cfg: FitConfig = FitConfig()) -> dict[int, FitReport]:
    return _sweep(fit_quantiles, q, max_components, cfg)


#####################################
# Sample fits
#####################################


def _em_run(x: np.ndarray, p: np.ndarray, means: np.ndarray, sigmas: np.ndarray, weights: np.ndarray,
            tol: float, max_iter: int, floor: float) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray, list[float]]]:
    n = x.size

    def joint(means, sigmas, weights):
        with np.errstate(divide="ignore"):
            return np.log(weights)[None, :] + norm.logpdf(x[:, None], means[None, :], sigmas[None, :])

    log_joint = joint(means, sigmas, weights)
    log_norm = logsumexp(log_joint, axis=1)
    nll = [-n * float(p @ log_norm)]
    for _ in range(max_iter):
        resp = np.exp(log_joint - log_norm[:, None]) * p[:, None]
        mass = resp.sum(axis=0)
        if np.any(mass <= 0):
            return None
        weights = mass / mass.sum()
        means = (resp.T @ x) / mass
        sigmas = np.sqrt(np.einsum("jc,jc->c", resp, (x[:, None] - means[None, :]) ** 2) / mass)
        if np.any(sigmas < floor):
            return None
        log_joint = joint(means, sigmas, weights)
        log_norm = logsumexp(log_joint, axis=1)
        nll.append(-n * float(p @ log_norm))
        if abs(nll[-2] - nll[-1]) <= tol * abs(nll[-2]):
            break
    return means, sigmas, weights, nll


def fit_sample_em(s: SampleForecast, C: int, restarts: int = 5, tol: float = 1e-8,
                  max_iter: int = 1000, seed: int = 0) -> FitReport:
    """Maximum-likelihood C-component normal mixture by EM, best of `restarts` runs.

    The trace holds the negative log-likelihood; the first run starts from
    quantile-spaced means, the others from distinct random draws.
    """
    if C < 1:
        raise InvalidParameterError(f"C must be >= 1, got {C}")
    if s.n <= 10 * C:
        raise InsufficientDataError(f"{s.n} draws are too few for a {C}-component EM fit (need > {10 * C})")
    x = s.values
    p = s.probabilities
    spread = float(x.max() - x.min())
    mean = float(p @ x)
    sd = math.sqrt(float(p @ (x - mean) ** 2))
    if not sd > 0:
        raise InsufficientDataError("sample has zero variance")

    if C == 1:
        nll = -s.n * float(p @ norm.logpdf(x, mean, sd))
        mixture = Mixture((Component(Family.NORM, mean, sd),))
        params = FitParams.encode([mean], [sd], [1.0], shared_sigma=False)
        return FitReport(mixture, params, (nll,), True, 0, "nll")

    rng = np.random.default_rng(seed)
    floor = 1e-8 * spread
    best = None
    for restart in range(max(1, restarts)):
        if restart == 0:
            start_means = np.quantile(x, np.linspace(0.1, 0.9, C))
        else:
            start_means = np.sort(rng.choice(x, size=C, replace=False))
        run = _em_run(x, p, start_means.astype(float), np.full(C, sd), np.full(C, 1.0 / C), tol, max_iter, floor)
        if run is None:
            logger.warning(f"EM restart {restart} collapsed a component; skipping it")
            continue
        if best is None or run[3][-1] < best[3][-1]:
            best = run
    if best is None:
        raise FittingError(f"every EM restart collapsed for C={C}")

    means, sigmas, weights, nll = best
    order = np.argsort(means, kind="stable")
    means, sigmas, weights = means[order], sigmas[order], weights[order]
    mixture = Mixture.from_components(
        [Component(Family.NORM, mu, sigma, weight=w) for mu, sigma, w in zip(means, sigmas, weights)],
        normalize=True,
    )
    try:
        params = FitParams.encode(means, sigmas, weights, shared_sigma=False)
    except InvalidParameterError:
        params = None
    converged = len(nll) - 1 < max_iter
    return FitReport(mixture, params, tuple(nll), converged, len(nll) - 1, "nll")


def bin_sample(f: BinForecast, n: int, seed: int) -> SampleForecast:
    """n draws: a bin chosen with probability p_i, then a uniform point inside it."""
    if int(n) < 1:
        raise InvalidParameterError(f"sample size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    probs = np.asarray(f.probs)
    chosen = rng.choice(f.n_bins, size=int(n), p=probs / probs.sum())
    edges = np.asarray(f.edges)
    return SampleForecast(tuple(rng.uniform(edges[chosen], edges[chosen + 1])))
