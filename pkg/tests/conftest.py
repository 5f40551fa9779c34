"""Shared fixtures and hypothesis profiles for the mixline suite."""

import os

import hypothesis
import numpy as np
import pytest

from mixline.distributions import Component, Family, Mixture

np.seterr(all="warn")

# Quadrature-backed properties are slow per example, so no deadline.
hypothesis.settings.register_profile("default", max_examples=25, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=200, deadline=None)
hypothesis.settings.register_profile("debugger", report_multiple_bugs=False, deadline=None)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def mdist1() -> Mixture:
    """0.3 Lnorm(2, 1) + 0.7 Norm(2.1, 1)"""
    return Mixture((
        Component(Family.LNORM, 2.0, 1.0, weight=0.3),
        Component(Family.NORM, 2.1, 1.0, weight=0.7),
    ))


@pytest.fixture
def mdist2() -> Mixture:
    """0.4 Norm(1.5, 1) + 0.6 Norm(4, 2)"""
    return Mixture((
        Component(Family.NORM, 1.5, 1.0, weight=0.4),
        Component(Family.NORM, 4.0, 2.0, weight=0.6),
    ))


@pytest.fixture
def truncated_lnorm() -> Mixture:
    """Lnorm(1, 0.4) truncated to [0, 8]"""
    return Mixture.single(Family.LNORM, 1.0, 0.4, lower=0.0, upper=8.0)


@pytest.fixture
def standard_normal() -> Mixture:
    return Mixture.single(Family.NORM, 0.0, 1.0)
