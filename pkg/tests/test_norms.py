import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spide import (Field, NormSpec, besov_norm, equivalent_H_norm, make_grid, mc_norm, mixed_jump_norm, mollify,
                   sobolev_norm, spacetime_norm, steklov_smooth)
from spide.errors import ConfigurationError, ShapeError
from spide.filterlab import random_band
from spide.norms import CSV_HEADER, bump_transform
from spide.symbols import YRule

G = make_grid(1, 256, 16.0)


def cos_moment(p):
    return math.gamma((p + 1) / 2) / (math.sqrt(math.pi) * math.gamma(p / 2 + 1))


@given(st.integers(1, 30), st.floats(-2, 2), st.sampled_from([2.0, 4.0]))
def test_sobolev_norm_of_a_tone(k, beta, p):
    xi = math.pi * k / G.L
    u = Field(G, np.cos(xi * G.x))
    want = (1 + xi**2) ** (beta / 2) * (2 * G.L * cos_moment(p)) ** (1 / p)
    assert sobolev_norm(u, beta, p).value == pytest.approx(want, rel=1e-10)


@given(st.integers(0, 1000), st.floats(-1, 2))
def test_besov_and_square_function_agree_at_p2(seed, beta):
    u = Field(G, random_band(G, seed, 6.0))
    assert besov_norm(u, beta, 2.0).value == pytest.approx(equivalent_H_norm(u, beta, 2.0).value, rel=1e-10)


def test_norm_families_are_comparable():
    u = Field(G, random_band(G, 3, 4.0))
    for beta in (0.0, 1.0):
        h = sobolev_norm(u, beta, 4.0).value
        ht = equivalent_H_norm(u, beta, 4.0).value
        assert 0.1 < ht / h < 10


@given(st.integers(0, 1000), st.floats(0.2, 3.0), st.sampled_from([2.0, 4.0]), st.floats(-1, 1))
def test_mollifier_is_a_contraction(seed, eps, p, beta):
    u = Field(G, random_band(G, seed, math.pi * 16 / G.L))
    assert sobolev_norm(mollify(u, eps), beta, p).value <= sobolev_norm(u, beta, p).value * (1 + 1e-8)


def test_mollifier_sweep_converges():
    u = Field(G, random_band(G, 9, 3.0))
    errs = [sobolev_norm(Field(G, mollify(u, e).values - u.values), 1.0, 4.0).value
            for e in 0.4 / 2.0 ** np.arange(8)]
    assert all(b <= a * 1.05 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3


def test_bump_has_unit_mass_and_is_even():
    assert bump_transform(np.array([0.0]), 1)[0] == pytest.approx(1.0, abs=1e-14)
    assert bump_transform(np.array([0.0]), 2)[0] == pytest.approx(1.0, abs=1e-14)
    with pytest.raises(ConfigurationError):
        mollify(Field(G, np.zeros(256)), 0.0)


def _spacetime(vals, steps):
    t = np.linspace(0, 1, steps + 1)
    return Field(G, np.stack([vals(s) for s in t]), times=t, closed=True)


def test_steklov_of_time_constant_field():
    base = np.exp(-G.x**2)
    g = _spacetime(lambda s: base, 64)
    n = 8
    gn = steklov_smooth(g, n)
    ref = mollify(Field(G, base), 1.0 / n).values
    late = g.times >= 1.0 / n - 1e-12
    np.testing.assert_allclose(gn.values[late], np.broadcast_to(ref, gn.values[late].shape), atol=1e-12)
    # the window is clipped at 0, so early slices ramp up linearly
    np.testing.assert_allclose(gn.values[1], n * g.times[1] * ref, atol=1e-12)


@given(st.integers(0, 63))
def test_steklov_is_adapted(k):
    base = np.exp(-G.x**2)
    g = _spacetime(lambda s: base * math.cos(3 * s), 64)
    bumped = g.values.copy()
    bumped[k + 1:] += 5.0 * base
    a = steklov_smooth(g, 16).values
    b = steklov_smooth(g.replace(values=bumped), 16).values
    np.testing.assert_array_equal(a[: k + 1], b[: k + 1])


def test_steklov_needs_a_fine_mesh():
    g = _spacetime(lambda s: np.zeros(256), 4)
    with pytest.raises(ConfigurationError):
        steklov_smooth(g, 8)


def test_steklov_sweep_converges():
    base = np.exp(-G.x**2 / 2)
    g = _spacetime(lambda s: math.sin(math.pi * s) ** 2 * base, 512)
    errs = []
    for n in (4, 8, 16, 32, 64, 128, 256):
        d = steklov_smooth(g, n)
        errs.append(spacetime_norm(d.replace(values=d.values - g.values), NormSpec("H", 0.0, 2.0)).value)
    assert all(b <= a * 1.05 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-2


@pytest.mark.parametrize("a", [0.5, 1.5])
def test_mixed_norm_of_an_indicator(a):
    u = np.exp(-G.x**2)
    rule = YRule.build(1, a, 0.01, 100.0, breaks=(1.0,))
    inside = np.linalg.norm(rule.nodes, axis=1) <= 1.0
    g = Field(G, inside[:, None] * u[None, :])
    mass = 2 * (0.01**-a - 1.0) / a
    want_2 = sobolev_norm(Field(G, u), 0.5, 4.0).value * math.sqrt(mass)
    assert mixed_jump_norm(g, rule, 2.0, 0.5, 4.0).value == pytest.approx(want_2, rel=1e-10)
    want_p = sobolev_norm(Field(G, u), 0.5, 4.0).value * mass**0.25
    assert mixed_jump_norm(g, rule, 4.0, 0.5, 4.0).value == pytest.approx(want_p, rel=1e-10)


def test_mixed_norm_with_mark_weights():
    Phi = Field(G, np.stack([np.exp(-G.x**2), 2 * np.exp(-G.x**2)]))
    got = mixed_jump_norm(Phi, np.array([0.25, 1.0]), 2.0, 0.0, 2.0).value
    assert got == pytest.approx(math.sqrt(0.25 + 4.0) * sobolev_norm(Field(G, np.exp(-G.x**2)), 0, 2).value)
    with pytest.raises(ShapeError):
        mixed_jump_norm(Phi, np.ones(3), 2.0, 0.0, 2.0)


def test_spacetime_norm_of_constant_field():
    u = np.exp(-G.x**2)
    f = _spacetime(lambda s: u, 10)
    got = spacetime_norm(f, NormSpec("H", 1.0, 4.0)).value
    assert got == pytest.approx(sobolev_norm(Field(G, u), 1.0, 4.0).value, rel=1e-12)
    with pytest.raises(ShapeError):
        sobolev_norm(f, 0, 2)


@given(st.permutations(list(range(12))))
def test_mc_norm_ignores_completion_order(perm):
    vals = np.linspace(1, 2, 12) ** 1.7
    a = mc_norm(vals, NormSpec("H", 0, 4.0), seeds=list(range(12)))
    b = mc_norm(vals[perm], NormSpec("H", 0, 4.0), seeds=perm)
    assert (a.value, a.mc_stderr, a.seed_range) == (b.value, b.mc_stderr, b.seed_range)


def test_mc_norm_row():
    v = mc_norm([2.0, 2.0, 2.0], NormSpec("B", 0.5, 2.0, domain="spacetime"), seeds=[4, 5, 6])
    assert v.value == 2.0 and v.mc_stderr == 0.0
    row = dict(zip(CSV_HEADER, v.csv_row()))
    assert row["family"] == "B" and row["seed-range"] == "4-6"


def test_norm_spec_invariants():
    with pytest.raises(ConfigurationError):
        NormSpec("H", 0.0, 0.5)
    with pytest.raises(ConfigurationError):
        NormSpec("Q", 0.0, 2.0)
    with pytest.raises(ConfigurationError):
        NormSpec("H", math.inf, 2.0)
