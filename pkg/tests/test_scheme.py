import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from requant.errors import SchemeError
from requant.scheme import (QuantizationScheme, ft_power_coefficients, gaussian_moment_fn,
                            gaussian_moment_xf, level_index, levels_inside_bins, max_scheme,
                            quantize, scale_factor_Af)


def quad_expectation(g, scheme, sigma=1.0):
    """Oracle: sum over bins of quad(g(x, level) pdf), both sides.

    The level is passed per bin, so the oracle never evaluates the
    quantizer itself and quad never straddles a jump.
    """
    # tail bins cut at 40 sigma, beyond which the Gaussian mass is < 1e-300
    a = np.where(np.isinf(scheme.a), 40.0 * sigma, scheme.a)
    total = 0.0
    for j, y in enumerate(scheme.y):
        for sgn in (1.0, -1.0):
            lo, hi = sorted((sgn * a[j], sgn * a[j + 1]))
            val, _ = integrate.quad(lambda x: g(x, sgn * y) * norm.pdf(x, scale=sigma), lo, hi,
                                    epsabs=1e-14, epsrel=1e-13, limit=200)
            total += val
    return total


def test_max_scheme_table1():
    s1 = max_scheme(1)
    np.testing.assert_array_equal(s1.a[:-1], [0.0])
    np.testing.assert_array_equal(s1.y, [0.798])
    s2 = max_scheme(2)
    np.testing.assert_array_equal(s2.a[:-1], [0.0, 0.9816])
    np.testing.assert_array_equal(s2.y, [0.4528, 1.510])
    s4 = max_scheme(4)
    np.testing.assert_array_equal(s4.a[:-1], [0.0, 0.5006, 1.050, 1.748])
    np.testing.assert_array_equal(s4.y, [0.2451, 0.7560, 1.344, 2.152])
    assert s4.a[-1] == np.inf


@pytest.mark.parametrize("M", [0, 5, -1])
def test_max_scheme_unsupported(M):
    with pytest.raises(SchemeError):
        max_scheme(M)


def test_quantize_examples():
    s4 = max_scheme(4)
    assert quantize(s4, 0.6) == 0.7560
    assert quantize(s4, -0.6) == -0.7560
    assert quantize(max_scheme(1), 3.0) == 0.798
    assert quantize(s4, 0.0) == 0.2451
    # bins are closed on the left
    assert quantize(s4, 0.5006) == 0.7560


def test_level_index_examples():
    assert level_index(max_scheme(4), 0.6) == 2
    assert level_index(max_scheme(4), -2.0) == -4
    assert level_index(max_scheme(2), 0.1) == 1
    assert level_index(max_scheme(2), 0.0) == 1


def test_antisymmetry_and_monotonicity_random():
    rng = np.random.default_rng(5)
    x = rng.normal(scale=2.0, size=10_000)
    for M in range(1, 5):
        s = max_scheme(M)
        np.testing.assert_array_equal(quantize(s, -x), -quantize(s, x))
        xs = np.sort(x)
        assert np.all(np.diff(quantize(s, xs)) >= 0)
        idx = level_index(s, x)
        np.testing.assert_array_equal(np.sign(idx) * s.y[np.abs(idx) - 1], quantize(s, x))


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50, allow_nan=False), st.integers(1, 4))
def test_quantize_property(x, M):
    s = max_scheme(M)
    q = quantize(s, x)
    assert abs(q) in s.levels
    if x != 0:
        assert quantize(s, -x) == -q
    j = abs(level_index(s, x))
    assert s.a[j - 1] <= abs(x) < s.a[j]


def test_gaussian_moment_fn_examples():
    for M in range(1, 5):
        assert gaussian_moment_fn(max_scheme(M), 0) == pytest.approx(1.0, abs=1e-15)
        assert gaussian_moment_fn(max_scheme(M), 1) == 0.0
        assert gaussian_moment_fn(max_scheme(M), 3) == 0.0
    assert gaussian_moment_fn(max_scheme(1), 2) == pytest.approx(0.636804, abs=1e-15)


def test_gaussian_moment_xf_examples():
    assert gaussian_moment_xf(max_scheme(1)) == pytest.approx(0.798 * np.sqrt(2 / np.pi), abs=1e-15)
    # exact ratio 0.798 sqrt(2/pi) / 0.798^2 = 0.999856
    assert scale_factor_Af(max_scheme(1)) == pytest.approx(np.sqrt(2 / np.pi) / 0.798, rel=1e-14)
    for M in range(1, 5):
        assert abs(scale_factor_Af(max_scheme(M)) - 1) < 1e-2


@pytest.mark.parametrize("M", [1, 2, 3, 4])
@pytest.mark.parametrize("sigma", [1.0, 0.7, 2.5])
def test_closed_forms_vs_quadrature(M, sigma):
    s = max_scheme(M)
    for n in range(0, 2 * M):
        want = quad_expectation(lambda x, y: y ** n, s, sigma)
        assert abs(gaussian_moment_fn(s, n, sigma) - want) < 1e-10
    want = quad_expectation(lambda x, y: x * y, s, sigma)
    assert abs(gaussian_moment_xf(s, sigma) - want) < 1e-10


def test_xf_scaling_and_Af_invariance():
    s = max_scheme(3)
    sigma = 1.7
    scaled = QuantizationScheme.from_sequences(s.a[:-1] / sigma, s.y)
    # change of variable x = sigma u
    assert gaussian_moment_xf(s, sigma) == pytest.approx(sigma * gaussian_moment_xf(scaled), rel=1e-13)
    # A_f has units of x / f: scaling the x-axis alone scales it by sigma,
    # scaling the levels as well leaves it unchanged
    joint = QuantizationScheme.from_sequences(s.a[:-1] * sigma, s.y)
    assert scale_factor_Af(joint, sigma) == pytest.approx(sigma * scale_factor_Af(s), rel=1e-13)
    both = QuantizationScheme.from_sequences(s.a[:-1] * sigma, s.y * sigma)
    assert scale_factor_Af(both, sigma) == pytest.approx(scale_factor_Af(s), rel=1e-13)


def test_ft_power_coefficients():
    s2 = max_scheme(2)
    c0 = ft_power_coefficients(s2, 0)
    assert c0.parity == "even" and c0.dc_weight == 1.0
    assert all(d == 0.0 for d, _ in c0.step_coeffs)
    c1 = ft_power_coefficients(s2, 1)
    assert c1.parity == "odd" and c1.base_coeff == 0.4528
    np.testing.assert_allclose(c1.step_coeffs, [(0.4528 - 1.510, 0.9816)], rtol=0, atol=1e-15)
    c2 = ft_power_coefficients(s2, 2)
    assert c2.dc_weight == pytest.approx(1.510 ** 2, abs=1e-15)
    np.testing.assert_allclose(c2.step_coeffs, [(0.4528 ** 2 - 1.510 ** 2, 0.9816)], atol=1e-15)


@pytest.mark.parametrize("M", [1, 2, 3, 4])
def test_ft_telescoping(M):
    s = max_scheme(M)
    for n in range(7):
        c = ft_power_coefficients(s, n)
        total = sum(d for d, _ in c.step_coeffs)
        assert total == pytest.approx(s.y[0] ** n - s.y[-1] ** n, abs=1e-12)


def test_levels_inside_bins():
    for M in range(1, 5):
        s = max_scheme(M)
        assert levels_inside_bins(s)
        assert levels_inside_bins(s, scale_factor_Af(s))
    bad = QuantizationScheme.from_sequences([0, 1.0], [1.5, 2.0])
    assert not levels_inside_bins(bad)


@pytest.mark.parametrize("a, y", [
    ([0, 1.0, 0.5], [0.1, 0.2, 0.3]),
    ([0, 1.0], [0.5, 0.4]),
    ([0, -1.0], [0.5, 1.0]),
    ([0, 1.0], [0.0, 1.0]),
    ([0, np.inf], [0.5, 1.0]),
    ([0, 1.0, 2.0], [0.5, 1.0]),
])
def test_invalid_schemes(a, y):
    with pytest.raises(SchemeError):
        QuantizationScheme.from_sequences(a, y)


def test_json_roundtrip(tmp_path):
    s = max_scheme(3)
    path = tmp_path / "s.json"
    path.write_text(json.dumps(s.to_dict()))
    assert QuantizationScheme.from_json(path) == s
    assert s.to_dict() == {"M": 3, "a": [0.0, 0.6589, 1.447], "y": [0.3177, 1.0, 1.894]}
    with pytest.raises(SchemeError):
        QuantizationScheme.from_dict({"M": 2, "a": [0.0, 1.0, 2.0], "y": [0.5, 1.0, 2.5]})
    with pytest.raises(SchemeError):
        QuantizationScheme.from_dict({"M": 2})


def test_scheme_is_frozen():
    s = max_scheme(2)
    with pytest.raises(AttributeError):
        s.M = 3
    np.testing.assert_array_equal(s.signed_levels, [-1.510, -0.4528, 0.4528, 1.510])
    np.testing.assert_array_equal(s.signed_indices, [-2, -1, 1, 2])
