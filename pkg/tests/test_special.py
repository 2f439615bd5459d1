import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special as sps

from avi.special import digamma, ln_gamma, ln_multigamma

EULER = 0.57721566490153286061


def test_digamma_reference_values():
    assert digamma(1.0) == pytest.approx(-EULER, abs=1e-12)
    assert digamma(2.0) == pytest.approx(1.0 - EULER, abs=1e-12)
    assert digamma(0.5) == pytest.approx(-EULER - 2 * math.log(2.0), abs=1e-12)
    assert digamma(0.5) == pytest.approx(-1.9635100260214235, abs=1e-12)


def test_ln_gamma_reference_values():
    assert ln_gamma(1.0) == pytest.approx(0.0, abs=1e-12)
    assert ln_gamma(2.0) == pytest.approx(0.0, abs=1e-12)
    assert ln_gamma(0.5) == pytest.approx(0.5 * math.log(math.pi), rel=1e-12)
    assert ln_gamma(0.5) == pytest.approx(0.5723649429247001, rel=1e-12)


@pytest.mark.parametrize("x", [0.1, 1.0, 10.0, 100.0])
def test_recurrences(x):
    assert abs(digamma(x + 1) - digamma(x) - 1 / x) < 1e-12
    assert abs(ln_gamma(x + 1) - ln_gamma(x) - math.log(x)) < 1e-12


def test_against_scipy_on_range():
    x = np.logspace(-3, 6, 4000)
    assert np.max(np.abs(digamma(x) - sps.digamma(x))) < 1e-12
    assert np.max(np.abs(ln_gamma(x) - sps.gammaln(x)) / np.maximum(1, np.abs(sps.gammaln(x)))) < 1e-12


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=1e6))
def test_scalar_matches_math_lgamma(x):
    assert abs(ln_gamma(x) - math.lgamma(x)) <= 1e-12 * max(1.0, abs(math.lgamma(x)))


def test_vectorised_shapes_and_scalar_return():
    assert isinstance(digamma(3.0), float)
    assert digamma(np.ones((2, 3))).shape == (2, 3)
    assert ln_gamma(np.array([1.0, 2.0])).shape == (2,)


@pytest.mark.parametrize("bad", [0.0, -1.0, np.array([1.0, -2.0])])
def test_domain_errors(bad):
    with pytest.raises(ValueError):
        digamma(bad)
    with pytest.raises(ValueError):
        ln_gamma(bad)


def test_multigamma_matches_scipy():
    for a in (1.5, 3.0, 12.7):
        for d in (1, 2, 3):
            assert ln_multigamma(a, d) == pytest.approx(sps.multigammaln(a, d), rel=1e-12)
