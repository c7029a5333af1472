import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from spide import (CoefficientSet, Field, apply_generator, generator_symbol, make_grid, preset, symbol_closed_form,
                   symbol_quadrature, truncation_correction, validate_A)
from spide.errors import ConfigurationError, ContractError
from spide.filterlab import random_density
from spide.symbols import YRule, constant, half_sphere, levy_constant

# Gamma(-3/2) e^{-3 i pi / 4}: the one-sided ray integral int_0^inf (e^{iy} - 1 - iy) y^{-5/2} dy
ONE_SIDED_15 = complex(-1.671085516420667, -1.671085516420667)


def fractional_laplacian_constant(d, a):
    """Textbook normalisation of -(-Laplacian)^{a/2} as a singular integral."""
    return a * 2 ** (a - 1) * special.gamma((d + a) / 2) / (math.pi ** (d / 2) * special.gamma(1 - a / 2))


def test_frozen_one_sided_value():
    a = 1.5
    assert abs(special.gamma(-a) * np.exp(-0.5j * math.pi * a) - ONE_SIDED_15) < 1e-13


@given(st.floats(0.05, 1.95), st.sampled_from([1, 2]))
def test_levy_constant_matches_textbook(a, d):
    assert levy_constant(d, a) == pytest.approx(fractional_laplacian_constant(d, a), rel=1e-10)


@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("a", [0.5, 1.0, 1.5, 1.9])
def test_unit_density_gives_fractional_laplacian(d, a):
    c = preset("fractional-laplacian", d=d, alpha=a)
    rng = np.random.default_rng(3)
    xi = rng.normal(size=(12, d)) * 3
    want = -np.linalg.norm(xi, axis=1) ** a
    np.testing.assert_allclose(symbol_closed_form(0.0, xi, c), want, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(symbol_quadrature(0.0, xi, c), want, rtol=1e-8, atol=1e-12)


def test_one_sided_density_against_frozen_value():
    c = preset("half-sphere-degenerate", alpha=1.5)
    xi = np.array([[1.0], [-1.0], [2.5]])
    k = levy_constant(1, 1.5)
    want = k * np.abs(xi[:, 0]) ** 1.5 * np.where(xi[:, 0] > 0, ONE_SIDED_15, np.conj(ONE_SIDED_15))
    np.testing.assert_allclose(symbol_closed_form(0.0, xi, c), want, rtol=1e-10)
    np.testing.assert_allclose(symbol_quadrature(0.0, xi, c), want, rtol=1e-8)


def ray_oracle(m, a, xi):
    """Raw Levy integral in d = 1 by adaptive scipy quadrature, one ray at a time."""
    total = 0j
    for sgn in (1.0, -1.0):
        dens = lambda r: float(m(0.0, np.array([[sgn * r]]))[0])
        k = sgn * xi
        chi = 1.0 if a > 1 else 0.0
        re0 = integrate.quad(lambda r: (math.cos(k * r) - 1) * dens(r) * r ** (-1 - a), 0, 1, limit=400)[0]
        im0 = integrate.quad(lambda r: (math.sin(k * r) - chi * k * r) * dens(r) * r ** (-1 - a), 0, 1,
                             limit=400)[0]
        re1 = (integrate.quad(lambda r: dens(r) * r ** (-1 - a), 1, np.inf, weight="cos", wvar=k)[0]
               - integrate.quad(lambda r: dens(r) * r ** (-1 - a), 1, np.inf)[0])
        im1 = integrate.quad(lambda r: dens(r) * r ** (-1 - a), 1, np.inf, weight="sin", wvar=k)[0]
        if chi:
            im1 -= k * integrate.quad(lambda r: dens(r) * r ** (-a), 1, np.inf)[0]
        total += complex(re0 + re1, im0 + im1)
    return total


@pytest.mark.parametrize("a", [0.5, 1.5])
def test_variable_density_against_scipy_rays(a):
    m = random_density(5, a, 0, symmetric=False)
    c = CoefficientSet(alpha=a, m=m, m0=constant(0.5), K=1.0, delta=0.9).validate()
    for xi in (0.7, 3.0):
        want = levy_constant(1, a) * ray_oracle(m, a, xi)
        got = symbol_quadrature(0.0, [[xi]], c, check=True)[0]
        assert abs(got - want) <= 1e-6 * abs(want)


@given(st.integers(0, 10_000), st.sampled_from([0.5, 1.0, 1.5]))
def test_real_part_nonpositive(seed, a):
    m = random_density(seed, a, 1, symmetric=a == 1.0)
    c = CoefficientSet(alpha=a, m=m, m0=constant(0.5), K=1.0, delta=0.9)
    xi = np.linspace(-20, 20, 9)[:, None]
    assert np.all(symbol_quadrature(0.0, xi, c).real <= 1e-10)


@pytest.mark.parametrize("a", [0.5, 1.0, 1.5])
def test_truncation_pieces_reassemble(a):
    m = random_density(11, a, 2, symmetric=a == 1.0)
    c = CoefficientSet(alpha=a, m=m, l=m, m0=constant(0.5), K=1.0, delta=0.9)
    xi = np.array([[0.3], [-2.0], [9.0]])
    full = symbol_quadrature(0.0, xi, c, density="l")
    for eps in (0.01, 0.3, 2.0):
        parts = truncation_correction(eps, 0.0, xi, c, density="l")
        np.testing.assert_allclose(parts.total(), full, rtol=1e-8, atol=1e-12)


def test_drift_enters_at_alpha_one():
    c = preset("fractional-laplacian", alpha=1.0, b=lambda t: np.array([0.25]))
    xi = np.array([[2.0]])
    assert generator_symbol(0.0, xi, c)[0] == pytest.approx(-2.0 + 0.5j)


def test_heat_symbol():
    c = preset("heat", d=2)
    assert generator_symbol(0.0, [[1.0, 2.0]], c)[0] == pytest.approx(-2.5)


def test_kim_form_tracks_time():
    c = preset("kim-form", alpha=1.5)
    for t in (0.0, 0.25, 0.6):
        a = 1 + 0.5 * math.sin(2 * math.pi * t)
        assert generator_symbol(t, [[2.0]], c)[0].real == pytest.approx(-a * 2**1.5, rel=1e-10)


def test_validation_catches_violations():
    with pytest.raises(ConfigurationError):
        CoefficientSet(alpha=2.5)
    with pytest.raises(ContractError):
        CoefficientSet(alpha=1.5, m=constant(2.0), K=1.0, delta=0.5).validate()
    lopsided = lambda t, y: np.where(np.asarray(y)[:, 0] > 0, 1.0, 0.5)
    rep = validate_A(CoefficientSet(alpha=1.0, m=lopsided, m0=constant(0.5), K=1.0, delta=0.5))
    assert not rep.passed and any("1" in str(v) for v in rep.violations)
    with pytest.raises(ContractError):  # m - l must dominate m0
        CoefficientSet(alpha=1.5, m=constant(1.0), l=constant(0.8), m0=constant(0.5), K=2.0, delta=0.1).validate()


def test_half_sphere_rules():
    with pytest.raises(ConfigurationError):
        preset("half-sphere-degenerate", alpha=1.0)
    c = preset("half-sphere-degenerate", d=2, alpha=1.0)
    assert c.validated
    assert half_sphere(1)(0.0, np.array([[1.0], [-1.0]])).tolist() == [1.0, 0.0]


def test_unknown_preset():
    with pytest.raises(ConfigurationError) as exc:
        preset("nope")
    assert exc.value.field == "preset"


def test_generator_needs_validation():
    g = make_grid(1, 32, 4.0)
    c = preset("fractional-laplacian", validate=False)
    with pytest.raises(ContractError):
        apply_generator(Field(g, np.zeros(32)), 0.0, c)


@given(st.floats(0.2, 1.9), st.floats(1e-3, 0.5), st.floats(2.0, 500.0))
def test_y_rule_mass(a, lo, hi):
    rule = YRule.build(1, a, lo, hi, breaks=(1.0,))
    want = 2 * (lo**-a - hi**-a) / a
    assert rule.weights.sum() == pytest.approx(want, rel=1e-10)
    tail = YRule.build(1, a, lo, hi, tail=True)
    assert tail.weights.sum() == pytest.approx(2 * lo**-a / a, rel=1e-10)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
@pytest.mark.parametrize("a", [0.6, 1.0, 1.4])
def test_radial_density_in_the_plane(a):
    # angular average of e^{i r xi.w} over the circle is 2 pi J0(r |xi|)
    prof = lambda r: 0.6 + 0.3 * np.exp(-0.5 * ((np.log(r) - 0.8) / 0.7) ** 2)
    m = lambda t, y: prof(np.maximum(np.linalg.norm(np.asarray(y), axis=1), 1e-300))
    c = CoefficientSet(alpha=a, d=2, m=m, m0=constant(0.6), K=1.0, delta=0.5)
    for xi in (0.5, 4.0):
        f = lambda r: (special.j0(r * xi) - 1) * prof(r) * r ** (-1 - a)
        raw = sum(integrate.quad(f, lo, hi, limit=800)[0] for lo, hi in ((0, 1), (1, 50), (50, 1e4)))
        raw += -integrate.quad(lambda r: prof(r) * r ** (-1 - a), 1e4, np.inf)[0]
        want = levy_constant(2, a) * 2 * math.pi * raw
        got = symbol_quadrature(0.0, [[xi * 0.6, xi * 0.8]], c, check=True)[0]
        assert abs(got.imag) < 1e-9 * abs(want)
        assert got.real == pytest.approx(want, rel=2e-6)
