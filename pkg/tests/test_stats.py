import math

import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import f_sf_reference, t_two_sided_reference
from scipy import special
from scipy import stats as sps

from factattn import stats


@given(st.floats(0.05, 60), st.floats(0.05, 60), st.floats(0, 1))
def test_betainc_matches_scipy(a, b, x):
    assert stats.betainc(a, b, x) == pytest.approx(special.betainc(a, b, x), rel=1e-9, abs=1e-13)


def test_betainc_domain():
    assert stats.betainc(2, 3, 0.0) == 0.0 and stats.betainc(2, 3, 1.0) == 1.0
    with pytest.raises(ValueError):
        stats.betainc(0, 1, 0.5)
    with pytest.raises(ValueError):
        stats.betainc(1, 1, 1.5)


@pytest.mark.parametrize("t,df", [(0.0, 3), (1.0, 1), (2.0, 5), (-2.5, 10), (4.2, 38), (0.3, 400)])
def test_t_two_sided_against_quadrature(t, df):
    assert stats.t_two_sided_p(t, df) == pytest.approx(t_two_sided_reference(t, df), abs=1e-10)


@pytest.mark.parametrize("f,d1,d2", [(0.5, 1, 10), (3.2, 4, 20), (10.0, 9, 400), (1.0, 2, 2)])
def test_f_sf_against_quadrature(f, d1, d2):
    assert stats.f_sf(f, d1, d2) == pytest.approx(f_sf_reference(f, d1, d2), abs=1e-10)
    assert stats.f_cdf(f, d1, d2) + stats.f_sf(f, d1, d2) == pytest.approx(1.0, abs=1e-12)


def test_t_quantiles():
    assert stats.t_ppf(0.975, 1) == pytest.approx(12.706204736174707, rel=1e-10)
    assert stats.t_ppf(0.975, 1e6) == pytest.approx(sps.t.ppf(0.975, 1e6), rel=1e-9)
    assert stats.t_ppf(0.5, 7) == 0.0
    with pytest.raises(ValueError):
        stats.t_ppf(1.0, 3)


@given(st.floats(0.001, 0.999), st.integers(1, 500))
def test_t_ppf_inverts_cdf(q, df):
    t = stats.t_ppf(q, df)
    assert stats.t_cdf(t, df) == pytest.approx(q, abs=1e-10)
    assert t == pytest.approx(sps.t.ppf(q, df), rel=1e-8, abs=1e-10)


def test_infinite_statistics():
    assert stats.t_sf(math.inf, 3) == 0.0 and stats.t_two_sided_p(-math.inf, 3) == 0.0
    assert stats.f_sf(math.inf, 1, 2) == 0.0 and stats.f_sf(0.0, 1, 2) == 1.0
