import math

import numpy as np
import pytest
from scipy.integrate import quad

import riskcap.specfun as sf
from riskcap.errors import NonConvergenceError, ValidationError


def quad_lower_gamma(s, x):
    """Independent quadrature oracle for gamma(s, x), x >= 0."""
    val, err = quad(lambda t: t ** (s - 1.0) * math.exp(-t), 0.0, x,
                    epsabs=1e-14, epsrel=1e-13, limit=300)
    return val


def test_gamma_fn_exact_points():
    assert sf.gamma_fn(1.0) == pytest.approx(1.0, rel=1e-14)
    assert sf.gamma_fn(2.0) == pytest.approx(1.0, rel=1e-14)
    assert sf.gamma_fn(0.5) == pytest.approx(math.sqrt(math.pi), rel=1e-13)


def test_gamma_fn_against_quadrature():
    # sqrt(pi)/2 for s = 1.5, from integrating the definition
    oracle, _ = quad(lambda t: math.sqrt(t) * math.exp(-t), 0.0, 60.0,
                     epsabs=1e-14, epsrel=1e-14, limit=400)
    assert sf.gamma_fn(1.5) == pytest.approx(oracle, rel=1e-12)
    assert sf.gamma_fn(1.5) == pytest.approx(0.8862269254527580, rel=1e-12)


def test_gamma_fn_rejects_nonpositive():
    for s in (0.0, -1.0):
        with pytest.raises(ValidationError):
            sf.gamma_fn(s)


def test_lower_gamma_s1_closed_form():
    assert sf.lower_incomplete_gamma(1.0, 2.0) == pytest.approx(1.0 - math.exp(-2.0), rel=1e-14)


def test_lower_gamma_limit_to_complete():
    # gamma(s, x) -> Gamma(s) as x grows
    for s in (0.5, 1.5):
        assert sf.lower_incomplete_gamma(s, 50.0) == pytest.approx(sf.gamma_fn(s), rel=1e-12)


def test_lower_gamma_small_argument_power_law():
    # gamma(s, x)/x^s -> 1/s as x -> 0
    s, x = 1.5, 1e-3
    ratio = sf.lower_incomplete_gamma(s, x) / x**s
    assert ratio == pytest.approx(1.0 / s, rel=1e-3)


def test_lower_gamma_negative_argument_integer_s():
    # for s = 1 the real branch agrees with the honest integral 1 - e^-x
    for x in (-0.5, -2.0, -10.0):
        assert sf.lower_incomplete_gamma(1.0, x) == pytest.approx(1.0 - math.exp(-x), rel=1e-12)


def test_lower_gamma_monotone_in_x():
    xs = np.linspace(0.0, 20.0, 200)
    vals = [sf.lower_incomplete_gamma(1.5, float(x)) for x in xs]
    assert np.all(np.diff(vals) > 0.0)


def test_recurrence_identity_on_grid():
    # gamma(s+1, x) = s gamma(s, x) - x^s e^-x
    for s in (0.4, 0.9, 1.5):
        for x in (0.1, 1.0, 5.0, 20.0, 45.0):
            lhs = sf.lower_incomplete_gamma(s + 1.0, x)
            rhs = s * sf.lower_incomplete_gamma(s, x) - x**s * math.exp(-x)
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-300)


def test_series_vs_quadrature_grid():
    svals = np.linspace(0.3, 2.5, 10)
    xvals = [0.05, 0.7, 3.0, 12.0, 28.0]
    for s in svals:
        for x in xvals:
            series = sf.lower_incomplete_gamma(float(s), float(x))
            via_quad = sf.lower_incomplete_gamma(float(s), float(x), method="quadrature")
            assert series == pytest.approx(via_quad, rel=1e-8)
            assert series == pytest.approx(quad_lower_gamma(float(s), float(x)), rel=1e-10)


def test_series_and_continued_fraction_agree_across_switch():
    for s in (0.5, 1.5):
        for x in (8.0, 15.0, 25.0, 31.0, 40.0):
            a = sf.lower_incomplete_gamma(s, x, method="series")
            b = sf.lower_incomplete_gamma(s, x, method="continued_fraction")
            assert a == pytest.approx(b, rel=1e-11)


def test_method_bookkeeping():
    assert sf.lower_incomplete_gamma_eval(1.5, 2.0).method_used == "series"
    assert sf.lower_incomplete_gamma_eval(1.5, 35.0).method_used == "continued_fraction"
    assert sf.lower_incomplete_gamma_eval(1.5, 2.0, method="quadrature").method_used == "quadrature"


def test_upper_plus_lower_is_complete():
    for s in (0.5, 1.2, 2.0):
        for x in (0.3, 3.0, 10.0, 33.0):
            total = sf.lower_incomplete_gamma(s, x) + sf.upper_incomplete_gamma(s, x)
            assert total == pytest.approx(sf.gamma_fn(s), rel=1e-12)


def test_kummer_leading_term():
    assert sf.kummer_m_1(1.5, 0.0) == 1.0


def test_kummer_m_1_2_closed_form():
    # M(1, 2, z) = (e^z - 1)/z; the oracle sums the series term by term
    z = 1.0
    term, total = 1.0, 1.0
    for k in range(1, 60):
        term *= z / (1.0 + k)
        total += term
    assert sf.kummer_m_1(1.0, z) == pytest.approx(total, rel=1e-14)
    assert sf.kummer_m_1(1.0, z) == pytest.approx(math.e - 1.0, rel=1e-13)


def test_kummer_gamma_identity_cross_paths():
    # gamma(s,z) = s^-1 z^s e^-z M(1, s+1, z) links the two code paths
    for s in (0.5, 1.5, 1.9):
        for z in (0.25, 2.0, 7.5, 14.0, 20.0):
            lhs = sf.lower_incomplete_gamma(s, z)
            rhs = z**s * math.exp(-z) * sf.kummer_m_1(s, z) / s
            assert lhs == pytest.approx(rhs, rel=1e-10)


def test_kummer_negative_argument_vs_direct_series():
    # small |z| keeps the alternating direct sum accurate enough to serve
    # as an oracle for the transformed evaluation
    for s in (0.5, 1.5):
        for z in (-0.5, -2.0, -6.0):
            term, total = 1.0, 1.0
            for k in range(1, 300):
                term *= z / (s + k)
                total += term
                if abs(term) < 1e-17 * abs(total):
                    break
            assert sf.kummer_m_1(s, z) == pytest.approx(total, rel=1e-11)


def test_exp_scaled_lower_gamma_deep_negative():
    # e^x gamma(s,x)/x^s stays finite and positive far down the negative axis
    for x in (-50.0, -500.0, -5000.0):
        val = sf.exp_scaled_lower_gamma(1.5, x)
        assert 0.0 < val < 1.0
    # asymptotically ~ 1/|x| (integrand mass near the endpoint)
    assert sf.exp_scaled_lower_gamma(1.5, -5000.0) == pytest.approx(1.0 / 5000.0, rel=0.01)


def test_series_cap_is_an_error_not_truncation():
    with pytest.raises(NonConvergenceError):
        sf.kummer_m_1(1.5, 800.0)


def test_lower_gamma_rejects_bad_inputs():
    with pytest.raises(ValidationError):
        sf.lower_incomplete_gamma(0.0, 1.0)
    with pytest.raises(ValidationError):
        sf.lower_incomplete_gamma(1.5, -1.0, method="quadrature")
    with pytest.raises(ValidationError):
        sf.lower_incomplete_gamma(1.5, 1.0, method="nope")
