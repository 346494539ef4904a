import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from pf4czm.material import Order
from pf4czm.oracle1d import (
    GAMMA_FOURTH_CHI0,
    GAMMA_FOURTH_CHI2,
    Profile1D,
    UnderResolvedWarning,
    fourth_order_brittle_exact,
    gamma_integral,
    profile_fourth_order,
    profile_second_order,
)


@pytest.mark.parametrize("chi", [0.0, 1.0, 2.0])
def test_second_order_gamma_is_one(chi):
    prof = profile_second_order(2.5, chi)
    assert abs(prof.gamma - 1.0) <= 1e-3


def test_second_order_closed_forms():
    p = profile_second_order(1.0, 2.0)
    r = np.abs(p.x)
    assert_allclose(p.phi, np.where(r <= math.pi / 2, 1 - np.sin(r), 0.0), atol=1e-15)
    p0 = profile_second_order(1.0, 0.0)
    assert_allclose(p0.phi, np.exp(-np.abs(p0.x)))


def test_fourth_order_chi2_baseline():
    prof = profile_fourth_order(2.5, 2.0)
    assert abs(prof.gamma - GAMMA_FOURTH_CHI2) <= 1e-3
    # the sampled profile integrates to the same value
    assert abs(gamma_integral(prof) - prof.gamma) <= 1e-4


def test_fourth_order_chi0_matches_closed_form():
    l0 = 2.0
    prof = profile_fourth_order(l0, 0.0, elements_per_l0=20)
    exact, d1, d2 = fourth_order_brittle_exact(prof.x, l0)
    assert np.abs(prof.phi - exact).max() <= 1e-5
    assert abs(prof.gamma - GAMMA_FOURTH_CHI0) <= 1e-6


def test_closed_form_satisfies_euler_lagrange():
    # (1 - l0^2/4 D^2)^2 phi = 0 away from the origin
    l0 = 1.3
    x = np.linspace(0.1, 5.0, 50)
    t = 2 * x / l0
    phi, d1, d2 = fourth_order_brittle_exact(x, l0)
    d4 = (16 / l0 ** 4) * (t - 3) * np.exp(-t)
    assert_allclose(phi - l0 ** 2 / 2 * d2 + l0 ** 4 / 16 * d4, 0.0, atol=1e-14)
    h = 1e-5
    fd = (fourth_order_brittle_exact(x + h, l0)[0] - fourth_order_brittle_exact(x - h, l0)[0]) / (2 * h)
    assert_allclose(d1, fd, rtol=1e-7, atol=1e-10)


@pytest.mark.parametrize("maker", [
    lambda: profile_second_order(1.0, 2.0),
    lambda: profile_second_order(1.0, 1.0),
    lambda: profile_fourth_order(1.0, 2.0),
])
def test_profile_shape(maker):
    p = maker()
    mid = np.flatnonzero(p.x == 0.0)
    assert_allclose(p.phi[mid], 1.0, atol=1e-12)
    assert abs(p.phi[0]) <= 1e-6 and abs(p.phi[-1]) <= 1e-6
    assert np.all((p.phi >= -1e-12) & (p.phi <= 1 + 1e-12))
    right = p.x >= 0
    assert np.all(np.diff(p.phi[right]) <= 1e-12)
    assert_allclose(p.phi, p.phi[::-1], atol=1e-14)


def test_zero_profile_has_zero_length():
    x = np.linspace(-10, 10, 801)
    z = np.zeros_like(x)
    for order in Order:
        assert gamma_integral(Profile1D(x, z, z, z, 1.0, 2.0, order)) == 0.0


@settings(max_examples=8, deadline=None)
@given(st.floats(0.2, 20.0))
def test_gamma_is_scale_invariant(l0):
    assert abs(profile_second_order(l0, 2.0, points_per_l0=200).gamma - 1.0) <= 1e-3
    assert abs(profile_fourth_order(l0, 2.0, elements_per_l0=10).gamma
               - GAMMA_FOURTH_CHI2) <= 1e-3


def test_under_resolved_grid_warns():
    p = profile_second_order(1.0, 2.0, points_per_l0=10)
    with pytest.warns(UnderResolvedWarning):
        gamma_integral(p)


def test_fourth_order_converges_under_refinement():
    g = [profile_fourth_order(1.0, 2.0, elements_per_l0=n).gamma for n in (5, 10, 20)]
    e = [abs(v - GAMMA_FOURTH_CHI2) for v in g]
    assert e[2] <= e[1] <= e[0] + 1e-12
    assert e[2] <= 1e-5


def test_bad_arguments():
    with pytest.raises(ValueError):
        profile_second_order(-1.0)
    with pytest.raises(ValueError):
        profile_second_order(1.0, chi=3.0)
    with pytest.raises(ValueError):
        profile_fourth_order(1.0, L=1.0)
