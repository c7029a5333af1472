import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spide import (Field, apply_multiplier, bessel_potential, forward, fractional_derivative, inverse, lp_blocks,
                   lp_partition, make_grid, read_snapshot, shift_field, write_snapshot)
from spide.errors import ConfigurationError, ShapeError
from spide.grid import write_snapshot as ws


def test_lattice_geometry():
    g = make_grid(1, 8, 2.0)
    assert g.h == 0.5
    np.testing.assert_allclose(g.x, [-2, -1.5, -1, -0.5, 0, 0.5, 1, 1.5])
    assert g.nyquist.sum() == 1
    assert g.volume == 4.0


def test_bad_grid_rejected():
    with pytest.raises(ConfigurationError):
        make_grid(3, 8, 1.0)
    with pytest.raises(ConfigurationError):
        make_grid(1, 7, 1.0)


def test_gaussian_transform_matches_continuum():
    # int e^{-x^2/2} e^{-i xi x} dx = sqrt(2 pi) e^{-xi^2/2}
    g = make_grid(1, 256, 16.0)
    u = Field.from_function(g, lambda x: np.exp(-x**2 / 2))
    spec = forward(u).values
    np.testing.assert_allclose(spec, math.sqrt(2 * math.pi) * np.exp(-g.xi**2 / 2), atol=1e-12)


@given(st.integers(3, 7), st.integers(0, 2**31 - 1))
def test_round_trip(logN, seed):
    g = make_grid(1, 2**logN, 3.0)
    v = np.random.default_rng(seed).standard_normal(g.shape)
    back = inverse(forward(Field(g, v))).values
    np.testing.assert_allclose(back, v, atol=1e-12)


def test_round_trip_2d():
    g = make_grid(2, 32, 4.0)
    v = np.random.default_rng(1).standard_normal(g.shape)
    np.testing.assert_allclose(inverse(forward(Field(g, v))).values, v, atol=1e-12)


def test_multiplier_zeroes_nyquist():
    g = make_grid(1, 16, 4.0)
    v = np.cos(math.pi * g.x / g.h)  # the Nyquist mode itself
    out = apply_multiplier(Field(g, v), np.ones(g.shape)).to_physical().values
    np.testing.assert_allclose(out, 0.0, atol=1e-12)


@given(st.integers(1, 20), st.floats(-2, 3))
def test_bessel_and_fractional_on_tones(k, beta):
    g = make_grid(1, 128, 8.0)
    xi = math.pi * k / g.L
    u = Field(g, np.sin(xi * g.x))
    np.testing.assert_allclose(bessel_potential(u, beta).to_physical().values,
                               (1 + xi**2) ** (beta / 2) * u.values, atol=1e-9 * (1 + xi**2) ** (abs(beta) / 2))
    np.testing.assert_allclose(fractional_derivative(u, 1.3).to_physical().values,
                               -(xi**1.3) * u.values, atol=1e-10 * xi**1.3 + 1e-12)


@given(st.floats(-10, 10))
def test_shift_is_exact_on_band_limited(y):
    g = make_grid(1, 64, 4.0)
    xi = math.pi * 3 / g.L
    u = Field(g, np.cos(xi * g.x))
    np.testing.assert_allclose(shift_field(u, y).to_physical().values, np.cos(xi * (g.x + y)), atol=1e-12)


@pytest.mark.parametrize("d,N", [(1, 1024), (2, 128), (1, 64)])
def test_partition_of_unity(d, N):
    g = make_grid(d, N, 16.0)
    s = lp_partition(g).bank.sum(axis=0)
    mask = (g.abs_xi > 0) & ~g.nyquist
    assert np.abs(s[mask] - 1).max() <= 1e-12


def test_blocks_reassemble_the_field():
    g = make_grid(1, 256, 16.0)
    v = np.exp(-g.x**2) * np.cos(3 * g.x)
    blocks = lp_blocks(Field(g, v))
    mean = v.mean()
    np.testing.assert_allclose(blocks.sum(axis=0), v - mean * 0, atol=1e-10)


def test_bank_members_have_annular_support():
    g = make_grid(1, 512, 16.0)
    bank = lp_partition(g).bank
    for j in range(1, len(bank)):
        supp = g.abs_xi[bank[j] > 0]
        assert supp.min() >= 2.0 ** (j - 2) and supp.max() <= 2.0 ** (j + 1)


def test_snapshot_round_trip(tmp_path):
    g = make_grid(1, 32, 2.0)
    v = np.random.default_rng(0).standard_normal((3,) + g.shape)
    f = Field(g, v, times=[0.0, 0.5, 1.0])
    write_snapshot(tmp_path / "a.sfld", f)
    raw = (tmp_path / "a.sfld").read_bytes()
    assert raw[:8] == b"SPIDEFLD" and len(raw) == 32 + v.size * 8
    back = read_snapshot(tmp_path / "a.sfld")
    np.testing.assert_array_equal(back.values, v)
    buf = io.BytesIO()
    ws(buf, f)
    assert buf.getvalue() == raw


def test_snapshot_rejects_garbage(tmp_path):
    p = tmp_path / "x.sfld"
    p.write_bytes(b"\0" * 64)
    with pytest.raises(ShapeError):
        read_snapshot(p)


def test_field_shape_checked():
    g = make_grid(1, 16, 1.0)
    with pytest.raises(ShapeError):
        Field(g, np.zeros(15))
    with pytest.raises(ShapeError):
        Field(g, np.zeros((2, 16)), times=[0.0])
