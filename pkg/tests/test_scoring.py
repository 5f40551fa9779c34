import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from mixline.distributions import Component, Family, Mixture
from mixline.errors import InvalidParameterError, UnsupportedRuleError
from mixline.representations import BinForecast, QuantileForecast, SampleForecast, quantiles_of
from mixline.scoring import (
    IntervalSet,
    central_interval,
    crps,
    crps_cross,
    crps_normal,
    crps_sample,
    interval_score,
    ks_stat,
    log_score,
    score_forecast,
    wis,
)
from utils.utils_config import DEFAULT_HUB_QUANTILE_LEVELS

#####################################
# Log score
#####################################


def test_log_score_worked_example(mdist1, mdist2):
    assert log_score(mdist1, 3.0) == pytest.approx(1.547238, abs=1e-6)
    assert log_score(mdist2, 3.0) == pytest.approx(1.848796, abs=1e-6)


def test_log_score_uniform_is_zero():
    assert log_score(Mixture.single(Family.UNIF, 0, 1), 0.3) == pytest.approx(0.0, abs=1e-15)


def test_log_score_zero_density_is_infinite():
    assert log_score(Mixture.single(Family.UNIF, 0, 1), 2.0) == math.inf


def test_log_score_of_bins_uses_the_truth_bin_mass():
    f = BinForecast((0.0, 1.0, 2.0), (0.25, 0.75))
    assert log_score(f, 1.2) == pytest.approx(-math.log(0.75))
    assert log_score(f, 5.0) == math.inf


def test_log_score_of_samples():
    s = SampleForecast((-1.0, 1.0))
    assert log_score(s, 0.0, bandwidth=1.0) == pytest.approx(-math.log(0.2419707), abs=1e-6)
    assert log_score(s, 0.0, method="ga") == pytest.approx(-stats.norm(0, math.sqrt(2)).logpdf(0.0))
    with pytest.raises(InvalidParameterError):
        log_score(s, 0.0, method="histogram")


def test_log_score_of_quantiles_is_unsupported():
    with pytest.raises(UnsupportedRuleError):
        log_score(QuantileForecast((0.5,), (1.0,)), 1.0)


#####################################
# CRPS
#####################################


def test_crps_worked_example(mdist1, mdist2):
    assert crps(mdist1, 3.0) == pytest.approx(0.6348212, abs=1e-4)
    assert crps(mdist2, 3.0) == pytest.approx(0.5306083, abs=1e-4)


def test_rules_disagree_on_the_worked_example(mdist1, mdist2):
    assert log_score(mdist1, 3.0) < log_score(mdist2, 3.0)
    assert crps(mdist2, 3.0) < crps(mdist1, 3.0)


def test_crps_standard_normal(standard_normal):
    assert crps(standard_normal, 0.0) == pytest.approx(0.2336950, abs=1e-6)
    assert crps_normal(0.0, 1.0, 0.0) == pytest.approx(0.2336950, abs=1e-7)


def test_crps_matches_closed_form_normal():
    rng = np.random.default_rng(20)
    for _ in range(50):
        mu, sigma, x_star = rng.normal(0, 10), rng.uniform(0.1, 5), rng.normal(0, 10)
        m = Mixture.single(Family.NORM, mu, sigma)
        assert crps(m, x_star) == pytest.approx(crps_normal(mu, sigma, x_star), abs=1e-6)


def test_crps_of_sample_is_exact():
    s = SampleForecast((1.0, 2.0, 3.0))
    assert crps(s, 2.0) == pytest.approx(2 / 9, abs=1e-12)
    assert crps_sample(s, 2.0) == pytest.approx(2 / 9, abs=1e-12)
    assert crps(SampleForecast((4.0,)), 4.0) == 0.0


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=40), st.floats(-60, 60))
def test_crps_of_sample_matches_energy_form(values, x_star):
    s = SampleForecast(tuple(values))
    assert crps(s, x_star) == pytest.approx(crps_sample(s, x_star), abs=1e-8)


def test_crps_of_weighted_sample_matches_energy_form():
    s = SampleForecast((0.0, 1.0, 4.0), weights=(0.2, 0.5, 0.3))
    assert crps(s, 1.5) == pytest.approx(crps_sample(s, 1.5), abs=1e-12)


def test_crps_of_bins_integrates_the_step_cdf():
    f = BinForecast((0.0, 1.0, 2.0), (0.4, 0.6))
    assert crps(f, 1.5) == pytest.approx(0.16 + 0.5, abs=1e-12)
    assert crps(f, 3.0) == pytest.approx(0.16 + 1.0 + 1.0, abs=1e-12)


def test_crps_of_discrete_mixture_matches_sample_form():
    pois = Mixture.single(Family.POIS, 2.0)
    support = np.arange(0, 40)
    pmf = stats.poisson(2).pmf(support)
    s = SampleForecast(tuple(support), weights=tuple(pmf / pmf.sum()))
    assert crps(pois, 3.0) == pytest.approx(crps_sample(s, 3.0), abs=1e-6)


def test_crps_cross_is_symmetric(mdist1, mdist2):
    assert crps_cross(mdist1, mdist2, 2.5) == pytest.approx(crps_cross(mdist2, mdist1, 2.5), abs=1e-9)


def test_crps_between_mixture_and_sample_is_unsupported(mdist1):
    with pytest.raises(UnsupportedRuleError):
        crps_cross(mdist1, SampleForecast((1.0,)), 0.0)
    with pytest.raises(InvalidParameterError):
        crps(mdist1, math.inf)


@given(st.floats(-20, 20), st.floats(-5, 5))
def test_scores_are_translation_equivariant(shift, x_star):
    m = Mixture((Component(Family.NORM, -1, 0.7, weight=0.4), Component(Family.LOGIS, 2, 1.2, weight=0.6)))
    moved = m.shifted(shift)
    assert crps(moved, x_star + shift) == pytest.approx(crps(m, x_star), abs=1e-8)
    assert log_score(moved, x_star + shift) == pytest.approx(log_score(m, x_star), abs=1e-9)


#####################################
# Interval scores
#####################################


@pytest.mark.parametrize(
    "alpha, lower, upper, x_star, expected",
    [(0.2, 1, 3, 2, 2.0), (0.2, 1, 3, 4, 12.0), (0.5, 0, 0, 0, 0.0), (0.2, 1, 3, 0, 12.0)],
)
def test_interval_score(alpha, lower, upper, x_star, expected):
    assert interval_score(alpha, lower, upper, x_star) == pytest.approx(expected)


def test_interval_score_rejects_bad_input():
    with pytest.raises(InvalidParameterError):
        interval_score(0.2, 3, 1, 2)
    with pytest.raises(InvalidParameterError):
        interval_score(1.0, 1, 3, 2)


@given(st.floats(0.01, 0.99), st.floats(-10, 10), st.floats(0, 10), st.floats(-20, 20))
def test_interval_score_is_at_least_the_width(alpha, lower, width, x_star):
    upper = lower + width
    score = interval_score(alpha, lower, upper, x_star)
    assert score >= (upper - lower) - 1e-12
    if lower <= x_star <= upper:
        assert score == pytest.approx(upper - lower)
    else:
        miss = lower - x_star if x_star < lower else x_star - upper
        assert score == pytest.approx((upper - lower) + (2 / alpha) * miss)


@pytest.mark.parametrize("x_star, expected", [(2.0, 0.13333), (4.0, 1.46667)])
def test_wis_single_interval(x_star, expected):
    f = IntervalSet(2.0, ((0.2, 1.0, 3.0),))
    assert wis(f, x_star) == pytest.approx(expected, abs=1e-5)


def test_wis_approximates_crps(standard_normal):
    q = quantiles_of(standard_normal, DEFAULT_HUB_QUANTILE_LEVELS)
    f = IntervalSet.from_quantiles(q)
    assert f.k == 11
    assert abs(wis(f, 0.0) - 0.2336950) / 0.2336950 <= 0.1


def test_wis_ignores_interval_order():
    intervals = ((0.2, 1.0, 3.0), (0.5, 1.5, 2.5), (0.8, 1.8, 2.2))
    forward = IntervalSet(2.0, intervals)
    backward = IntervalSet(2.0, intervals[::-1])
    assert wis(forward, 3.7) == pytest.approx(wis(backward, 3.7), abs=1e-12)


def test_interval_set_validation():
    with pytest.raises(InvalidParameterError):
        IntervalSet(0.0, ())
    with pytest.raises(InvalidParameterError):
        IntervalSet(0.0, ((0.2, 1.0, 0.0),))
    with pytest.raises(InvalidParameterError):
        IntervalSet(0.0, ((0.2, -1.0, 1.0), (0.2, -2.0, 2.0)))
    with pytest.raises(InvalidParameterError, match="median"):
        IntervalSet.from_quantiles(QuantileForecast((0.25, 0.75), (1.0, 2.0)))
    with pytest.raises(InvalidParameterError, match="partner"):
        IntervalSet.from_quantiles(QuantileForecast((0.1, 0.5, 0.8), (1.0, 2.0, 3.0)))


def test_from_quantiles_pairs_symmetric_levels():
    f = IntervalSet.from_quantiles(QuantileForecast((0.1, 0.25, 0.5, 0.75, 0.9), (0.0, 1.0, 2.0, 3.0, 4.0)))
    assert f.median == 2.0
    assert f.intervals == ((0.2, 0.0, 4.0), (0.5, 1.0, 3.0))


#####################################
# Kolmogorov-Smirnov
#####################################


def test_ks_at_exact_quantiles(standard_normal):
    n = 10
    draws = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n)
    assert ks_stat(SampleForecast(tuple(draws)), standard_normal) == pytest.approx(0.5 / n, abs=1e-12)


def test_ks_against_own_ecdf_and_point_mass():
    s = SampleForecast((3.0, 1.0, 2.0, 2.0))
    assert ks_stat(s, s) == 0.0
    assert ks_stat(SampleForecast((0.0,)), Mixture.single(Family.DIRAC, 0.0)) == 0.0


def test_ks_accepts_a_plain_callable():
    s = SampleForecast((0.25, 0.75))
    assert ks_stat(s, lambda x: min(max(x, 0.0), 1.0)) == pytest.approx(0.25)


#####################################
# Rule dispatch
#####################################


def test_score_forecast_dispatch(mdist1):
    levels = DEFAULT_HUB_QUANTILE_LEVELS
    assert score_forecast(mdist1, 3.0, "logs", levels, 0.05) == pytest.approx(1.547238, abs=1e-6)
    lower, upper = central_interval(mdist1, 0.05)
    assert score_forecast(mdist1, 3.0, "is", levels, 0.05) == pytest.approx(interval_score(0.05, lower, upper, 3.0))
    assert score_forecast(mdist1, 3.0, "wis", levels, 0.05) > 0


@pytest.mark.parametrize("rule", ["logs", "crps"])
def test_quantile_forecasts_only_take_interval_rules(rule):
    q = QuantileForecast((0.025, 0.5, 0.975), (0.0, 1.0, 2.0))
    with pytest.raises(UnsupportedRuleError):
        score_forecast(q, 1.0, rule, DEFAULT_HUB_QUANTILE_LEVELS, 0.05)
    assert score_forecast(q, 1.0, "is", DEFAULT_HUB_QUANTILE_LEVELS, 0.05) == pytest.approx(2.0)


def test_interval_rules_need_quantiles_or_mixtures():
    f = BinForecast((0.0, 1.0), (1.0,))
    with pytest.raises(UnsupportedRuleError):
        score_forecast(f, 0.5, "wis", DEFAULT_HUB_QUANTILE_LEVELS, 0.05)
    with pytest.raises(UnsupportedRuleError):
        score_forecast(f, 0.5, "energy", DEFAULT_HUB_QUANTILE_LEVELS, 0.05)


def test_is_needs_the_matching_quantile_levels():
    q = QuantileForecast((0.1, 0.5, 0.9), (0.0, 1.0, 2.0))
    with pytest.raises(UnsupportedRuleError, match="lacks levels"):
        score_forecast(q, 1.0, "is", DEFAULT_HUB_QUANTILE_LEVELS, 0.05)
