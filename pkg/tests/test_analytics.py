import mpmath
import numpy as np
import pytest

from entrofield.analytics import (CorrelatorQuery, QuadratureError, bessel_k0, bessel_k1,
                                  bessel_k1_reference, continuum_correlator,
                                  correlator_quadrature, truncated_variance)

# K1(1) from mpmath's own Bessel implementation (independent of our integral)
K1_AT_1 = float(mpmath.besselk(1, 1))


def test_k1_small_z_limit():
    assert 1e-4 * bessel_k1(1e-4) == pytest.approx(1.0, abs=1e-6)


def test_k1_at_one():
    assert bessel_k1(1.0) == pytest.approx(0.601907, abs=1e-6)
    assert bessel_k1(1.0) == pytest.approx(K1_AT_1, rel=1e-13)


def test_k1_against_integral_representation():
    zs = np.geomspace(1e-3, 30, 40)
    ours = bessel_k1(zs)
    ref = np.array([bessel_k1_reference(z) for z in zs])
    assert np.max(np.abs(ours / ref - 1)) < 1e-10


def test_k1_against_mpmath_besselk():
    for z in [1e-3, 0.3, 1.9, 2.0, 2.1, 5.0, 19.9, 20.1, 30.0]:
        assert bessel_k1(z) == pytest.approx(float(mpmath.besselk(1, z)), rel=1e-12)
        assert bessel_k0(z) == pytest.approx(float(mpmath.besselk(0, z)), rel=1e-12)


def test_k1_positive_and_decreasing():
    z = np.linspace(1e-3, 30, 2000)
    k = bessel_k1(z)
    assert np.all(k > 0)
    assert np.all(np.diff(k) < 0)


def test_k1_derivative_recurrence():
    z = np.linspace(0.2, 25, 60)
    h = 1e-5 * z
    deriv = (bessel_k1(z + h) - bessel_k1(z - h)) / (2 * h)
    expected = -bessel_k0(z) - bessel_k1(z) / z
    assert np.max(np.abs(deriv / expected - 1)) < 1e-6


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_k1_domain(z):
    with pytest.raises(ValueError):
        bessel_k1(z)


def test_continuum_correlator_value():
    assert continuum_correlator(CorrelatorQuery(1.0, 1.0)) == pytest.approx(
        K1_AT_1 / (4 * np.pi**2), rel=1e-13)
    assert continuum_correlator(CorrelatorQuery(1.0, 1.0)) == pytest.approx(0.01525, abs=5e-6)


def test_continuum_correlator_scaling():
    for m, r in [(0.5, 2.0), (2.0, 0.3), (3.0, 1.1)]:
        value = continuum_correlator(CorrelatorQuery(m, r))
        unit = continuum_correlator(CorrelatorQuery(1.0, m * r))
        assert value == pytest.approx(m**2 * unit, rel=1e-13)


def test_query_validation():
    with pytest.raises(ValueError):
        CorrelatorQuery(0.0, 1.0)
    with pytest.raises(ValueError):
        CorrelatorQuery(1.0, -1.0)


def test_quadrature_matches_closed_form_on_grid():
    for m in [0.3, 0.7, 1.0, 2.5]:
        for r in [0.2, 0.5, 1.0, 2.0, 4.0]:
            q = CorrelatorQuery(m, r)
            res = correlator_quadrature(q)
            closed = continuum_correlator(q)
            assert abs(res.value - closed) < 1e-6 * closed
            assert abs(res.value - closed) < 1e-9
            assert res.error_estimate < 1e-9


def test_quadrature_monotone_in_r():
    vals = [correlator_quadrature(CorrelatorQuery(1.0, r)).value for r in np.linspace(0.2, 4, 15)]
    assert np.all(np.diff(vals) < 0)


def test_quadrature_strict_failure_reported():
    with pytest.raises(QuadratureError):
        correlator_quadrature(CorrelatorQuery(1.0, 1.0), tol=1e-30, max_segments=30)
    loose = correlator_quadrature(CorrelatorQuery(1.0, 1.0), tol=1e-30, max_segments=30, strict=False)
    assert np.isfinite(loose.value)


def test_truncated_variance_grows_with_cutoff():
    v = [truncated_variance(1.0, c) for c in [5, 10, 20, 40, 80]]
    assert np.all(np.diff(v) > 0)
    # quadratic UV growth: Λ²/(8π²) at large cutoff
    assert v[-1] / v[-2] == pytest.approx(4.0, rel=0.02)
