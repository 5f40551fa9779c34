import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixline.distributions import Family, Mixture
from mixline.errors import EnsembleError, WeightError
from mixline.ensemble import (
    bin_average,
    crps_gram,
    crps_min_weights,
    crps_min_weights_from_forecasts,
    em_weights,
    em_weights_from_likelihoods,
    likelihood_matrix,
    ma_ensemble,
    pmp_weights,
    pmp_weights_from_likelihoods,
    project_simplex,
    quantile_average,
)
from mixline.representations import BinForecast, QuantileForecast
from mixline.scoring import crps, log_score

WORKED_WEIGHTS = (0.5286434, 0.4713566)

#####################################
# Mixture averaging
#####################################


def test_worked_ensemble_scores(mdist1, mdist2):
    ensemble = ma_ensemble([mdist1, mdist2], WORKED_WEIGHTS)
    assert log_score(ensemble, 3.0) == pytest.approx(1.678156, abs=1e-5)
    assert crps(ensemble, 3.0) == pytest.approx(0.5486368, abs=1e-4)


def test_ensemble_cdf_is_the_weighted_sum(mdist1, mdist2):
    ensemble = ma_ensemble([mdist1, mdist2], (0.25, 0.75))
    xs = np.linspace(-3, 12, 31)
    np.testing.assert_allclose(ensemble.cdf(xs), 0.25 * mdist1.cdf(xs) + 0.75 * mdist2.cdf(xs), atol=1e-12)


def test_single_model_ensemble_is_the_model(mdist1):
    ensemble = ma_ensemble([mdist1], (1.0,))
    xs = np.linspace(-2, 10, 25)
    np.testing.assert_allclose(ensemble.pdf(xs), mdist1.pdf(xs), atol=1e-15)


def test_zero_weight_models_are_dropped(mdist1, mdist2):
    ensemble = ma_ensemble([mdist1, mdist2], (1.0, 0.0))
    assert len(ensemble.components) == len(mdist1.components)


@pytest.mark.parametrize(
    "weights, error",
    [((0.5,), EnsembleError), ((0.5, 0.4), WeightError), ((1.5, -0.5), WeightError), ((np.nan, 1.0), WeightError)],
)
def test_ma_ensemble_rejects_bad_weights(mdist1, mdist2, weights, error):
    with pytest.raises(error):
        ma_ensemble([mdist1, mdist2], weights)


def test_ma_ensemble_needs_a_model():
    with pytest.raises(EnsembleError):
        ma_ensemble([], ())


#####################################
# Quantile and bin averaging
#####################################


def test_quantile_average_mean():
    first = QuantileForecast((0.25, 0.75), (1.0, 3.0))
    second = QuantileForecast((0.25, 0.75), (3.0, 5.0))
    assert quantile_average([first, second]).values == pytest.approx((2.0, 4.0))
    weighted = quantile_average([first, second], (0.75, 0.25))
    assert weighted.values == pytest.approx((1.5, 3.5))


def test_quantile_average_median_ignores_weights():
    models = [QuantileForecast((0.5,), (v,)) for v in (1.0, 2.0, 10.0)]
    assert quantile_average(models, (0.8, 0.1, 0.1), method="median").values == (2.0,)


def test_quantile_average_of_one_model_is_the_model():
    q = QuantileForecast((0.1, 0.5, 0.9), (-1.0, 0.5, 2.0))
    assert quantile_average([q]) == q


@given(st.floats(-100, 100))
def test_quantile_average_commutes_with_shifts(shift):
    models = [QuantileForecast((0.1, 0.5, 0.9), values) for values in ((0.0, 1.0, 2.0), (1.0, 1.5, 4.0))]
    moved = [QuantileForecast(q.levels, tuple(v + shift for v in q.values)) for q in models]
    expected = np.asarray(quantile_average(models).values) + shift
    np.testing.assert_allclose(quantile_average(moved).values, expected, atol=1e-9)


def test_quantile_average_errors():
    first = QuantileForecast((0.25, 0.75), (1.0, 3.0))
    with pytest.raises(EnsembleError, match="level grid"):
        quantile_average([first, QuantileForecast((0.2, 0.75), (1.0, 3.0))])
    with pytest.raises(EnsembleError):
        quantile_average([first], method="trimmed")
    with pytest.raises(EnsembleError):
        quantile_average([])


def test_bin_average():
    first = BinForecast((0.0, 1.0, 2.0), (0.2, 0.8))
    second = BinForecast((0.0, 1.0, 2.0), (0.6, 0.4))
    assert bin_average([first, second]).probs == pytest.approx((0.4, 0.6))
    with pytest.raises(EnsembleError, match="edges"):
        bin_average([first, BinForecast((0.0, 1.5, 2.0), (0.5, 0.5))])


#####################################
# Posterior model probability
#####################################


def test_pmp_cdf_mode_reproduces_the_worked_weights(mdist1, mdist2):
    weights = pmp_weights([mdist1, mdist2], 3.0, mode="cdf")
    np.testing.assert_allclose(weights, WORKED_WEIGHTS, atol=1e-6)


def test_pmp_density_mode(mdist1, mdist2):
    weights = pmp_weights([mdist1, mdist2], 3.0)
    np.testing.assert_allclose(weights, (0.57487, 0.42513), atol=1e-4)
    assert weights.sum() == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("mode", ["density", "cdf"])
def test_pmp_identical_models_share_equally(mdist2, mode):
    np.testing.assert_allclose(pmp_weights([mdist2] * 4, 2.0, mode=mode), [0.25] * 4, atol=1e-15)


def test_pmp_is_permutation_equivariant(mdist1, mdist2, standard_normal):
    forward = pmp_weights([mdist1, mdist2, standard_normal], 1.2)
    backward = pmp_weights([standard_normal, mdist2, mdist1], 1.2)
    np.testing.assert_allclose(forward, backward[::-1], atol=1e-14)


def test_pmp_errors():
    unit = Mixture.single(Family.UNIF, 0.0, 1.0)
    with pytest.raises(EnsembleError, match="zero likelihood"):
        pmp_weights([unit, unit], 5.0)
    with pytest.raises(EnsembleError):
        pmp_weights([unit], 0.5, mode="ratio")
    with pytest.raises(EnsembleError):
        pmp_weights([], 0.5)


def test_pmp_over_several_observations_multiplies_likelihoods():
    likelihoods = np.array([[0.2, 0.1], [0.5, 0.25]])
    estimate = pmp_weights_from_likelihoods(likelihoods)
    np.testing.assert_allclose(estimate.as_array(), [0.8, 0.2], atol=1e-12)


def test_likelihood_matrix_shape(mdist1, mdist2):
    matrix = likelihood_matrix([[mdist1, mdist2]] * 3, [1.0, 2.0, 3.0], "cdf")
    assert matrix.shape == (3, 2)
    assert matrix[2, 0] == pytest.approx(mdist1.cdf(3.0))
    with pytest.raises(EnsembleError):
        likelihood_matrix([[mdist1, mdist2]], [1.0, 2.0])


#####################################
# CRPS-minimizing weights
#####################################


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-10, 10)))
def test_project_simplex_lands_on_the_simplex(v):
    w = project_simplex(v)
    assert np.all(w >= 0)
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(project_simplex(w), w, atol=1e-12)


def test_project_simplex_examples():
    np.testing.assert_allclose(project_simplex(np.array([0.5, 0.5])), [0.5, 0.5])
    np.testing.assert_allclose(project_simplex(np.array([2.0, 0.0])), [1.0, 0.0])
    np.testing.assert_allclose(project_simplex(np.array([1.0, 1.0, -3.0])), [0.5, 0.5, 0.0])


def test_crps_min_puts_everything_on_a_point_mass_at_the_truth(standard_normal):
    point = Mixture.single(Family.DIRAC, 2.0)
    weights = crps_min_weights([point, standard_normal], [2.0])
    np.testing.assert_allclose(weights, [1.0, 0.0], atol=1e-3)


def test_crps_min_identical_models_attain_the_single_model_score(mdist2):
    observations = [1.0, 3.0, 5.5]
    estimate = crps_min_weights_from_forecasts([[mdist2, mdist2]] * 3, observations)
    single = np.mean([crps(mdist2, x) for x in observations])
    assert estimate.objective == pytest.approx(single, abs=1e-8)


def test_crps_min_matches_a_grid_search(mdist1, mdist2):
    observations = [1.0, 2.5, 3.0, 4.2, 6.0]
    grid = np.linspace(0.0, 1.0, 101)
    objective = [
        np.mean([crps(ma_ensemble([mdist1, mdist2], (w, 1 - w)), x) for x in observations])
        for w in grid
    ]
    oracle = grid[int(np.argmin(objective))]
    weights = crps_min_weights([mdist1, mdist2], observations)
    assert weights[0] == pytest.approx(oracle, abs=0.02)

    equal = np.mean([crps(ma_ensemble([mdist1, mdist2], (0.5, 0.5)), x) for x in observations])
    found = np.mean([crps(ma_ensemble([mdist1, mdist2], weights), x) for x in observations])
    assert found <= equal + 1e-9


def test_crps_gram_is_symmetric_and_scores_the_ensemble(mdist1, mdist2):
    gram = crps_gram([[mdist1, mdist2]], [3.0])
    np.testing.assert_allclose(gram, gram.T)
    w = np.array(WORKED_WEIGHTS)
    assert w @ gram @ w == pytest.approx(0.5486368, abs=1e-4)


def test_crps_min_errors(mdist1):
    with pytest.raises(EnsembleError):
        crps_min_weights([mdist1], [1.0])
    with pytest.raises(EnsembleError):
        crps_min_weights([mdist1, mdist1], [])


#####################################
# EM weights
#####################################


def test_em_log_likelihood_never_decreases():
    rng = np.random.default_rng(11)
    likelihoods = rng.gamma(1.0, 1.0, size=(30, 4))
    estimate = em_weights_from_likelihoods(likelihoods)
    trace = np.asarray(estimate.trace)
    assert np.all(np.diff(trace) >= -1e-12)
    assert estimate.as_array().sum() == pytest.approx(1.0, abs=1e-12)


def test_one_em_step_on_one_observation_is_pmp(mdist1, mdist2):
    weights = em_weights([mdist1, mdist2], [3.0], max_iter=1)
    np.testing.assert_allclose(weights, pmp_weights([mdist1, mdist2], 3.0), atol=1e-12)


def test_em_on_one_observation_runs_to_the_densest_model(mdist1, mdist2):
    weights = em_weights([mdist1, mdist2], [3.0])
    assert weights[0] > 0.99
    assert mdist1.pdf(3.0) > mdist2.pdf(3.0)


def test_em_identical_models_stay_uniform(mdist1):
    np.testing.assert_allclose(em_weights([mdist1] * 3, [1.0, 2.0, 4.0]), [1 / 3] * 3, atol=1e-12)


def test_em_finds_the_model_that_generated_the_data():
    near = Mixture.single(Family.NORM, 0.0, 1.0)
    far = Mixture.single(Family.NORM, 10.0, 1.0)
    observations = np.random.default_rng(3).normal(10.0, 1.0, 20)
    weights = em_weights([near, far], observations)
    assert weights[1] > 0.95


def test_em_errors():
    unit = Mixture.single(Family.UNIF, 0.0, 1.0)
    with pytest.raises(EnsembleError, match="zero density"):
        em_weights([unit, unit], [0.5, 3.0])
    with pytest.raises(EnsembleError):
        em_weights([unit], [])
    with pytest.raises(EnsembleError):
        em_weights_from_likelihoods(np.array([[0.5, -0.1]]))
