import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bornkit.special import bessel_all, bessel_j, bessel_y, hankel1

mpmath.mp.dps = 80


def oracle_j(n, x):
    """Ascending series in 80-digit arithmetic, summed until terms vanish."""
    x = mpmath.mpf(x)
    half = x / 2
    total = mpmath.mpf(0)
    k = 0
    while True:
        term = (-1) ** k * half ** (2 * k + n) / (mpmath.factorial(k) * mpmath.factorial(k + n))
        total += term
        if k > 5 and abs(term) < mpmath.mpf(10) ** -60 * max(abs(total), 1):
            return total
        k += 1


def oracle_y(n, x):
    """Neumann series for Y0 / Y1 in 80-digit arithmetic."""
    x = mpmath.mpf(x)
    half = x / 2
    log_term = mpmath.log(half) + mpmath.euler
    if n == 0:
        total = mpmath.mpf(0)
        hk = mpmath.mpf(0)
        k = 1
        while True:
            hk += mpmath.mpf(1) / k
            term = (-1) ** (k + 1) * hk * half ** (2 * k) / mpmath.factorial(k) ** 2
            total += term
            if k > 5 and abs(term) < mpmath.mpf(10) ** -60:
                break
            k += 1
        return 2 / mpmath.pi * (log_term * oracle_j(0, x) + total)
    total = mpmath.mpf(0)
    hk = mpmath.mpf(0)
    k = 0
    while True:
        hk1 = hk + mpmath.mpf(1) / (k + 1)
        term = (-1) ** k * (hk + hk1) * half ** (2 * k + 1) / (mpmath.factorial(k) * mpmath.factorial(k + 1))
        total += term
        hk = hk1
        if k > 5 and abs(term) < mpmath.mpf(10) ** -60:
            break
        k += 1
    return 2 / mpmath.pi * log_term * oracle_j(1, x) - 2 / (mpmath.pi * x) - total / mpmath.pi


def test_oracle_agrees_with_mpmath_builtin():
    for x in (0.3, 1.0, 7.5, 31.0):
        for n in (0, 1):
            assert abs(oracle_j(n, x) - mpmath.besselj(n, x)) < 1e-40
            assert abs(oracle_y(n, x) - mpmath.bessely(n, x)) < 1e-40


def test_reference_values():
    assert bessel_j(0, 0.0) == 1.0
    assert bessel_j(1, 0.0) == 0.0
    assert abs(bessel_j(0, 1.0) - 0.7651976865579666) <= 1e-15
    assert abs(bessel_y(0, 1.0) - 0.08825696421567698) <= 1e-15
    assert abs(bessel_y(1, 1.0) - (-0.7812128213002887)) <= 1e-15
    h = hankel1(0, 1.0)
    assert abs(h - (0.76519769 + 0.08825696j)) <= 1e-8


def test_large_argument_magnitude():
    x = 40.0
    assert abs(abs(hankel1(0, x)) / math.sqrt(2 / (math.pi * x)) - 1) < 0.01


@pytest.mark.parametrize("bad", [0.0, -1.0, 1e-300 * -1])
def test_y_and_hankel_reject_nonpositive(bad):
    with pytest.raises(ValueError):
        bessel_y(0, bad)
    with pytest.raises(ValueError):
        hankel1(1, bad)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -0.5])
def test_j_rejects_bad_input(bad):
    with pytest.raises(ValueError):
        bessel_j(0, bad)


def test_unsupported_order():
    with pytest.raises(ValueError):
        bessel_j(2, 1.0)


def test_wronskian_log_spaced():
    x = np.logspace(-3, math.log10(50), 100)
    j0, j1, y0, y1 = bessel_all(x)
    w = j1 * y0 - j0 * y1
    np.testing.assert_allclose(w, 2 / (math.pi * x), rtol=1e-9)


def test_random_points_against_oracle():
    rng = np.random.default_rng(2024)
    x = np.concatenate([rng.uniform(1e-6, 50, 900), 10 ** rng.uniform(-6, 0, 100)])
    j0, j1, y0, y1 = bessel_all(x)
    worst_j = worst_y = 0.0
    for i, xi in enumerate(x):
        worst_j = max(worst_j, abs(j0[i] - float(oracle_j(0, xi))), abs(j1[i] - float(oracle_j(1, xi))))
        worst_y = max(worst_y, abs(y0[i] - float(oracle_y(0, xi))), abs(y1[i] - float(oracle_y(1, xi))))
    assert worst_j <= 1e-12
    assert worst_y <= 1e-10


@pytest.mark.parametrize("x", [3.999, 4.0, 4.001, 24.999, 25.0, 25.001, 12.0])
def test_regime_boundaries_continuous(x):
    for n in (0, 1):
        assert abs(bessel_j(n, x) - float(mpmath.besselj(n, x))) < 1e-13
        assert abs(bessel_y(n, x) - float(mpmath.bessely(n, x))) < 1e-12


def test_vectorized_matches_scalar():
    x = np.array([[0.5, 5.0], [15.0, 45.0]])
    vec = hankel1(1, x)
    assert vec.shape == x.shape
    for idx in np.ndindex(x.shape):
        assert vec[idx] == hankel1(1, float(x[idx]))


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=1e-3, max_value=200.0))
def test_wronskian_property(x):
    j0, j1, y0, y1 = (float(v[0]) for v in bessel_all(np.array([x])))
    assert abs((j1 * y0 - j0 * y1) * math.pi * x / 2 - 1) < 1e-9


@settings(max_examples=200, deadline=None)
@given(st.floats(min_value=0.1, max_value=60.0))
def test_recurrence_property(x):
    # J_{n-1} + J_{n+1} = (2n/x) J_n with n = 1 gives J2 = (2/x) J1 - J0; compare to mpmath J2
    j0, j1, y0, y1 = (float(v[0]) for v in bessel_all(np.array([x])))
    j2 = 2 / x * j1 - j0
    assert abs(j2 - float(mpmath.besselj(2, x))) < 1e-11 * max(1.0, 2 / x)
    y2 = 2 / x * y1 - y0
    assert abs(y2 - float(mpmath.bessely(2, x))) < 1e-10 * max(1.0, abs(y2))
