import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special

from epsense.bessel import bessel_j, bessel_j_range, bessel_j_table

# (n, x, J_n(x)) computed once with mpmath at 30 digits.
REFERENCE = [
    (0, 0.0, 1.0),
    (0, 1e-06, 0.99999999999975),
    (1, 1e-06, 4.9999999999993747737e-7),
    (0, 0.5, 0.93846980724081290423),
    (1, 0.5, 0.24226845767487388638),
    (2, 0.5, 0.030604023458682641307),
    (5, 0.5, 8.053627241357474086e-6),
    (0, 1.0, 0.76519768655796655145),
    (1, 1.0, 0.44005058574493351596),
    (3, 1.0, 0.019563353982668405919),
    (10, 1.0, 2.630615123687453207e-10),
    (0, 2.0, 0.22389077914123566805),
    (1, 2.0, 0.5767248077568733872),
    (2, 2.0, 0.35283402861563771915),
    (7, 2.0, 0.00017494407486827416851),
    (20, 2.0, 3.9189728050907538391e-19),
    (0, 5.0, -0.17759677131433830435),
    (4, 5.0, 0.39123236045864817782),
    (12, 5.0, 0.000076278131660845513551),
    (30, 3.0, 6.7223399381463311503e-28),
]


@pytest.mark.parametrize("n,x,expected", REFERENCE)
def test_reference_values(n, x, expected):
    assert bessel_j(n, x) == pytest.approx(expected, rel=1e-13, abs=1e-300)


@pytest.mark.parametrize("x", [1e-12, 1e-6, 0.01, 0.3, 1.0, 7.5, 30.0, 100.0])
def test_matches_scipy(x):
    table = bessel_j_table(x, 40)
    ref = special.jv(np.arange(41), x)
    big = np.abs(ref) > 1e-290
    assert np.allclose(table[big], ref[big], rtol=1e-11, atol=1e-14 * np.abs(ref).max())


def test_zero_argument():
    t = bessel_j_table(0.0, 5)
    assert t[0] == 1.0 and np.all(t[1:] == 0.0)


@given(st.floats(min_value=-50, max_value=50, allow_nan=False), st.integers(min_value=0, max_value=25))
@settings(max_examples=200, deadline=None)
def test_parity_in_order_and_argument(x, n):
    jn = bessel_j(n, x)
    assert bessel_j(-n, x) == pytest.approx((-1) ** n * jn, abs=1e-300)
    assert bessel_j(n, -x) == pytest.approx((-1) ** n * jn, abs=1e-300)


@given(st.floats(min_value=0.01, max_value=40, allow_nan=False))
@settings(max_examples=100, deadline=None)
def test_normalisation_and_recurrence(x):
    table = bessel_j_table(x, 80)
    assert table[0] + 2 * table[2::2].sum() == pytest.approx(1.0, abs=1e-13)
    n = np.arange(1, 60)
    lhs = table[n - 1] + table[n + 1]
    rhs = 2 * n / x * table[n]
    assert np.allclose(lhs, rhs, rtol=1e-9, atol=1e-14)


def test_range_contains_negative_orders():
    r = bessel_j_range(1.3, -4, 4)
    assert len(r) == 9
    assert r[0] == pytest.approx(bessel_j(4, 1.3))
    assert r[1] == pytest.approx(-bessel_j(3, 1.3))


def test_no_overflow_at_high_order():
    v = bessel_j(200, 1e-3)
    assert v == 0.0 or (math.isfinite(v) and v >= 0)
