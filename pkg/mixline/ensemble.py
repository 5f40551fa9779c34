"""
ensemble.py - multi-model ensembles and ensemble weight estimation.

Combination:
    ma_ensemble        weighted mixture of mixture forecasts
    quantile_average   per-level mean or median of quantile forecasts
    bin_average        weighted average of bin forecasts sharing edges

Weights:
    pmp_weights        posterior model probability (density or CDF at x*)
    crps_min_weights   simplex weights minimizing mean ensemble CRPS
    em_weights         likelihood-maximizing weights by EM

The *_from_likelihoods and *_from_gram variants take precomputed matrices
so one weight vector can be estimated across many forecast keys, where
each model contributes a different forecast per key.
"""

#####################################
# Import Modules
#####################################

# Import packages from Python Standard Library
import math
from dataclasses import dataclass
from typing import Optional, Sequence

# Import external packages
import numpy as np
from joblib import Parallel, delayed
from scipy.special import logsumexp

# Import functions from local modules
from mixline.distributions import WEIGHT_TOL, Mixture, flatten
from mixline.errors import EnsembleError, WeightError
from mixline.representations import BinForecast, QuantileForecast
from mixline.scoring import Forecast, crps, crps_cross
from utils.utils_logger import logger

#####################################
# Constants
#####################################

PMP_MODES = ("density", "cdf")
QUANTILE_METHODS = ("mean", "median")

CRPS_MIN_BUDGET = 500
CRPS_MIN_STEP_TOL = 1e-12
EM_TOL = 1e-8
EM_MAX_ITER = 1000


@dataclass(frozen=True)
class WeightEstimate:
    """Weights on the simplex with the objective they attain and how the search went."""

    weights: tuple[float, ...]
    objective: float
    trace: tuple[float, ...] = ()
    iterations: int = 0
    converged: bool = True

    def as_array(self) -> np.ndarray:
        return np.asarray(self.weights)


#####################################
# Combination
#####################################


def _check_weights(weights: Sequence[float], count: int) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    if count == 0:
        raise EnsembleError("an ensemble needs at least one model")
    if weights.shape != (count,):
        raise EnsembleError(f"{count} models but {weights.size} weights")
    if np.any(~np.isfinite(weights)) or np.any(weights < 0):
        raise WeightError("ensemble weights must be finite and nonnegative")
    total = math.fsum(weights)
    if abs(total - 1.0) > WEIGHT_TOL:
        raise WeightError(f"ensemble weights sum to {total!r}, expected 1")
    return weights


def equal_weights(count: int) -> np.ndarray:
    return np.full(count, 1.0 / count)


def ma_ensemble(models: Sequence[Mixture], weights: Sequence[float]) -> Mixture:
    """Mixture of the models with the given weights; zero-weight models are dropped."""
    models = list(models)
    weights = _check_weights(weights, len(models))
    kept = [(model, weight) for model, weight in zip(models, weights) if weight > 0]
    if len(kept) < len(models):
        logger.debug(f"Dropped {len(models) - len(kept)} zero-weight models from the ensemble.")
    return flatten(kept)


def quantile_average(models: Sequence[QuantileForecast], weights: Optional[Sequence[float]] = None,
                     method: str = "mean") -> QuantileForecast:
    """Combine quantile forecasts level by level (weights are ignored for the median)."""
    models = list(models)
    if not models:
        raise EnsembleError("an ensemble needs at least one model")
    if method not in QUANTILE_METHODS:
        raise EnsembleError(f"unknown quantile averaging method '{method}'")
    levels = np.asarray(models[0].levels)
    for model in models[1:]:
        if len(model.levels) != levels.size or np.any(np.abs(np.asarray(model.levels) - levels) > 1e-12):
            raise EnsembleError("quantile forecasts do not share a level grid")
    values = np.array([model.values for model in models])

    if method == "mean":
        weights = equal_weights(len(models)) if weights is None else _check_weights(weights, len(models))
        combined = weights @ values
    else:
        combined = np.median(values, axis=0)
    if np.any(np.diff(combined) < 0):
        raise EnsembleError("combined quantile values are not monotone")
    return QuantileForecast(models[0].levels, tuple(combined))


def bin_average(models: Sequence[BinForecast], weights: Optional[Sequence[float]] = None) -> BinForecast:
    models = list(models)
    if not models:
        raise EnsembleError("an ensemble needs at least one model")
    edges = models[0].edges
    if any(model.edges != edges for model in models[1:]):
        raise EnsembleError("bin forecasts do not share bin edges")
    weights = equal_weights(len(models)) if weights is None else _check_weights(weights, len(models))
    probs = weights @ np.array([model.probs for model in models])
    return BinForecast(edges, tuple(probs / probs.sum()))


#####################################
# Posterior model probability
#####################################


def likelihood_matrix(forecasts_per_obs: Sequence[Sequence[Mixture]], observations: Sequence[float],
                      mode: str = "density") -> np.ndarray:
    """L[j, m]: density (or CDF) of model m's forecast at observation j."""
    if mode not in PMP_MODES:
        raise EnsembleError(f"unknown posterior model probability mode '{mode}'")
    if len(forecasts_per_obs) != len(observations):
        raise EnsembleError(f"{len(forecasts_per_obs)} forecast rows but {len(observations)} observations")
    rows = []
    for models, x_star in zip(forecasts_per_obs, observations):
        evaluate = (lambda m: m.pdf(float(x_star))) if mode == "density" else (lambda m: m.cdf(float(x_star)))
        rows.append([evaluate(model) for model in models])
    matrix = np.asarray(rows, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] == 0 or matrix.shape[1] == 0:
        raise EnsembleError("need at least one observation and one model")
    return matrix


def pmp_weights_from_likelihoods(likelihoods: np.ndarray) -> WeightEstimate:
    """Normalized product of per-observation likelihoods under equal priors."""
    likelihoods = np.atleast_2d(np.asarray(likelihoods, dtype=float))
    with np.errstate(divide="ignore"):
        log_evidence = np.log(likelihoods).sum(axis=0)
    if not np.any(np.isfinite(log_evidence)):
        raise EnsembleError("every model has zero likelihood; posterior model probabilities are undefined")
    log_weights = log_evidence - logsumexp(log_evidence)
    weights = np.exp(log_weights)
    weights = weights / weights.sum()
    evidence = float(logsumexp(log_evidence) - math.log(log_evidence.size))
    return WeightEstimate(tuple(weights), -evidence)


def pmp_weights(models: Sequence[Mixture], x_star: float, mode: str = "density") -> np.ndarray:
    """w_t = p_t(x*) / sum_k p_k(x*); mode="cdf" uses F_t(x*) instead."""
    models = list(models)
    if not models:
        raise EnsembleError("an ensemble needs at least one model")
    likelihoods = likelihood_matrix([models], [x_star], mode)
    return pmp_weights_from_likelihoods(likelihoods).as_array()


#####################################
# CRPS-minimizing weights
#####################################


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    cssv = np.cumsum(u) - 1.0
    index = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - cssv / index > 0)
    theta = cssv[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _gram_row(models: Sequence[Forecast], x_star: float) -> np.ndarray:
    count = len(models)
    row = np.empty((count, count))
    for i in range(count):
        row[i, i] = crps(models[i], x_star)
        for k in range(i + 1, count):
            row[i, k] = row[k, i] = crps_cross(models[i], models[k], x_star)
    return row


def crps_gram(forecasts_per_obs: Sequence[Sequence[Forecast]], observations: Sequence[float],
              workers: int = 1) -> np.ndarray:
    """G[m, k] = mean over observations of the integral of (F_m - H)(F_k - H).

    The mean CRPS of an ensemble with simplex weights w is w' G w.
    """
    if len(observations) == 0:
        raise EnsembleError("CRPS weights need at least one observation")
    if len(forecasts_per_obs) != len(observations):
        raise EnsembleError(f"{len(forecasts_per_obs)} forecast rows but {len(observations)} observations")
    sizes = {len(models) for models in forecasts_per_obs}
    if len(sizes) != 1:
        raise EnsembleError("every observation needs a forecast from every model")
    if workers > 1:
        rows = Parallel(n_jobs=workers)(
            delayed(_gram_row)(models, x_star) for models, x_star in zip(forecasts_per_obs, observations)
        )
    else:
        rows = [_gram_row(models, x_star) for models, x_star in zip(forecasts_per_obs, observations)]
    gram = np.mean(rows, axis=0)
    return 0.5 * (gram + gram.T)


def _projected_gradient(gram: np.ndarray, start: np.ndarray, budget: int) -> tuple[np.ndarray, int, bool]:
    step = 1.0 / max(2.0 * float(np.max(np.linalg.eigvalsh(gram))), 1e-300)
    weights = start
    for iteration in range(1, budget + 1):
        updated = project_simplex(weights - step * 2.0 * gram @ weights)
        if np.max(np.abs(updated - weights)) < CRPS_MIN_STEP_TOL:
            return updated, iteration, True
        weights = updated
    return weights, budget, False


def crps_min_weights_from_gram(gram: np.ndarray, budget: int = CRPS_MIN_BUDGET) -> WeightEstimate:
    """Minimize w' G w on the simplex by projected gradient, restarting from equal weights and each vertex."""
    gram = np.asarray(gram, dtype=float)
    count = gram.shape[0]
    if count == 1:
        return WeightEstimate((1.0,), float(gram[0, 0]))
    starts = [equal_weights(count)] + [np.eye(count)[index] for index in range(count)]

    best, best_value, trace, used, converged = None, math.inf, [], 0, False
    for start in starts:
        weights, iterations, done = _projected_gradient(gram, start, budget)
        value = float(weights @ gram @ weights)
        trace.append(value)
        used += iterations
        if value < best_value - 1e-15:
            best, best_value, converged = weights, value, done

    equal = equal_weights(count)
    equal_value = float(equal @ gram @ equal)
    if equal_value <= best_value:
        best, best_value = equal, equal_value
    if not converged:
        logger.warning(f"CRPS weight search hit its budget of {budget} iterations; returning the best point found")
    return WeightEstimate(tuple(best / best.sum()), best_value, tuple(trace), used, converged)


def crps_min_weights_from_forecasts(forecasts_per_obs: Sequence[Sequence[Mixture]], observations: Sequence[float],
                                    budget: int = CRPS_MIN_BUDGET, workers: int = 1) -> WeightEstimate:
    """CRPS-minimizing weights, with the objective recomputed by scoring the ensembles directly."""
    count = len(forecasts_per_obs[0]) if forecasts_per_obs else 0
    if count < 2:
        raise EnsembleError("CRPS weights need at least two models")
    estimate = crps_min_weights_from_gram(crps_gram(forecasts_per_obs, observations, workers), budget)

    def mean_crps(weights: np.ndarray) -> float:
        scores = [crps(ma_ensemble(models, weights), x_star)
                  for models, x_star in zip(forecasts_per_obs, observations)]
        return float(np.mean(scores))

    equal = equal_weights(count)
    found = estimate.as_array()
    found_value = mean_crps(found)
    equal_value = mean_crps(equal)
    if equal_value <= found_value:
        found, found_value = equal, equal_value
    logger.info(f"CRPS-minimizing weights {np.round(found, 6).tolist()} with mean CRPS {found_value:.6f}")
    return WeightEstimate(tuple(found), found_value, estimate.trace, estimate.iterations, estimate.converged)


def crps_min_weights(models: Sequence[Mixture], observations: Sequence[float],
                     budget: int = CRPS_MIN_BUDGET) -> np.ndarray:
    """Simplex weights minimizing the mean CRPS of ma_ensemble(models, w) over the observations."""
    models = list(models)
    observations = list(observations)
    if not observations:
        raise EnsembleError("CRPS weights need at least one observation")
    return crps_min_weights_from_forecasts([models] * len(observations), observations, budget).as_array()


#####################################
# EM weights
#####################################


def em_weights_from_likelihoods(likelihoods: np.ndarray, max_iter: int = EM_MAX_ITER,
                                tol: float = EM_TOL) -> WeightEstimate:
    """Mixture-weight EM from a uniform start; the trace holds the log-likelihood after each update."""
    likelihoods = np.atleast_2d(np.asarray(likelihoods, dtype=float))
    if np.any(~np.isfinite(likelihoods)) or np.any(likelihoods < 0):
        raise EnsembleError("likelihoods must be finite and nonnegative")
    dead = np.flatnonzero(likelihoods.sum(axis=1) <= 0)
    if dead.size:
        raise EnsembleError(f"observation(s) {dead.tolist()} have zero density under every model")
    with np.errstate(divide="ignore"):
        log_lik = np.log(likelihoods)

    count = likelihoods.shape[1]
    weights = equal_weights(count)
    with np.errstate(divide="ignore"):
        previous = float(logsumexp(log_lik + np.log(weights), axis=1).sum())
    trace = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        with np.errstate(divide="ignore"):
            joint = log_lik + np.log(weights)
        responsibilities = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
        weights = responsibilities.mean(axis=0)
        weights = weights / weights.sum()
        with np.errstate(divide="ignore"):
            current = float(logsumexp(log_lik + np.log(weights), axis=1).sum())
        trace.append(current)
        if abs(current - previous) <= tol * max(abs(previous), 1e-300):
            converged = True
            break
        previous = current
    logger.debug(f"EM weights after {iteration} iterations: log-likelihood {trace[-1] if trace else previous}")
    return WeightEstimate(tuple(weights), -trace[-1] if trace else -previous, tuple(trace), iteration, converged)


def em_weights(models: Sequence[Mixture], observations: Sequence[float], max_iter: int = EM_MAX_ITER,
               tol: float = EM_TOL) -> np.ndarray:
    """Weights maximizing sum_j log sum_m w_m p_m(x*_j), by EM from the uniform start.

    One step (max_iter=1) with a single observation gives the density-mode
    pmp_weights. Left to converge on a single observation, the weights run to
    the vertex of the model with the highest density there.
    """
    models = list(models)
    observations = list(observations)
    if not models:
        raise EnsembleError("an ensemble needs at least one model")
    if not observations:
        raise EnsembleError("EM weights need at least one observation")
    likelihoods = likelihood_matrix([models] * len(observations), observations, "density")
    return em_weights_from_likelihoods(likelihoods, max_iter, tol).as_array()
