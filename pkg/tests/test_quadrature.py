import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fbcool.quadrature import integrate_peaked, integrate_sampled, lorentzian_tails, multi_peak_grid, peak_grid


def lorentz(x, x0, w):
    return w / ((x - x0) ** 2 + w**2)


def lorentz_area(lo, hi, x0, w):
    return math.atan((hi - x0) / w) - math.atan((lo - x0) / w)


def test_peak_grid_shape():
    g = peak_grid(10.0, 0.01, 0.0, 20.0, 1001)
    assert g[0] == 0.0 and g[-1] == 20.0
    assert np.all(np.diff(g) > 0)
    assert np.min(np.diff(g)) < 0.01  # resolves the linewidth
    with pytest.raises(ValueError):
        peak_grid(1.0, 0.0, 0.0, 2.0)
    with pytest.raises(ValueError):
        peak_grid(1.0, 1.0, 2.0, 2.0)


def test_multi_peak_grid_is_sorted_union():
    g = multi_peak_grid([(1.0, 1e-3), (3.0, 1e-2)], 0.1, 5.0, 501)
    assert np.all(np.diff(g) > 0)
    assert g.size > 501


@settings(max_examples=40)
@given(st.floats(1e-6, 1e-2), st.floats(0.2, 0.8))
def test_sampled_lorentzian_with_tails(width, frac):
    x0 = 1.0
    lo, hi = x0 - frac, x0 + frac
    x = peak_grid(x0, width, lo, hi, 4001)
    res = integrate_sampled(x, lorentz(x, x0, width))
    exact = lorentz_area(0.0, np.inf, x0, width)
    assert res.value == pytest.approx(exact, rel=1e-4)
    assert abs(res.value - exact) <= res.error + 1e-12


def test_tails_vanish_when_switched_off():
    x = np.linspace(0.5, 1.5, 101)
    y = lorentz(x, 1.0, 0.1)
    assert integrate_sampled(x, y, tails=False).tail == 0.0
    lower, upper = lorentzian_tails(x, y)
    assert lower > 0 and upper > 0


def test_sampled_input_validation():
    with pytest.raises(ValueError):
        integrate_sampled([0, 1], [1, 1])
    with pytest.raises(ValueError):
        integrate_sampled([0, 2, 1], [1, 1, 1])


def test_adaptive_two_peaks():
    peaks = [(1.0, 1e-5), (1.3, 1e-3)]

    def f(x):
        return lorentz(x, 1.0, 1e-5) + 3 * lorentz(x, 1.3, 1e-3)

    res = integrate_peaked(f, peaks, 0.5, 2.0, rtol=1e-8, tails=False)
    exact = lorentz_area(0.5, 2.0, 1.0, 1e-5) + 3 * lorentz_area(0.5, 2.0, 1.3, 1e-3)
    assert res.value == pytest.approx(exact, rel=1e-7)
