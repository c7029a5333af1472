import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spide.errors import ConfigurationError, ContractError, ShapeError
from spide.noise import (MarkMeasure, compensated_integral, dump_events, make_path, sample_poisson_marks,
                         sample_stable_jumps, stream, tail_mass)

unit = lambda t, y: np.ones(np.atleast_2d(y).shape[0])


@given(st.integers(0, 2**63), st.integers(0, 1000))
def test_streams_are_reproducible_and_separate(seed, pid):
    a = stream(seed, pid, "stable").uniform(size=4)
    assert np.array_equal(a, stream(seed, pid, "stable").uniform(size=4))
    assert not np.array_equal(a, stream(seed, pid, "marks").uniform(size=4))
    assert not np.array_equal(a, stream(seed, pid + 1, "stable").uniform(size=4))


def test_stream_rejects_bad_keys():
    with pytest.raises(ConfigurationError):
        stream(1, 0, "levy")
    with pytest.raises(ConfigurationError):
        stream(-1, 0, "stable")


def test_adding_a_source_leaves_the_others_alone():
    mk = MarkMeasure([[0.5], [1.5]], [1.0, 2.0])
    bare = make_path(seed=7, alpha=1.5, density=unit, eps_cut=0.1)
    full = make_path(seed=7, alpha=1.5, density=unit, eps_cut=0.1, marks=mk, M=3)
    np.testing.assert_array_equal(bare.stable_times, full.stable_times)
    np.testing.assert_array_equal(bare.stable_marks, full.stable_marks)
    assert full.wiener.shape == (512, 3)


def test_stable_jump_count_matches_intensity():
    alpha, eps, T = 1.2, 0.3, 2.0
    mean = tail_mass(alpha, eps) * T
    counts = [len(sample_stable_jumps(unit, 1.0, eps, T, 11, alpha=alpha, path_id=i)[0]) for i in range(400)]
    assert abs(np.mean(counts) - mean) < 4 * math.sqrt(mean / 400)


def test_stable_jump_radii_follow_the_tail():
    alpha, eps = 1.5, 0.1
    ys = np.concatenate([sample_stable_jumps(unit, 1.0, eps, 1.0, 3, alpha=alpha, path_id=i)[1] for i in range(300)])
    r = np.abs(ys[:, 0])
    assert r.min() > eps
    # P(|y| > 2 eps) = 2^-alpha
    frac = np.mean(r > 2 * eps)
    assert abs(frac - 2**-alpha) < 4 * math.sqrt(frac * (1 - frac) / len(r))
    assert abs(np.mean(ys[:, 0] > 0) - 0.5) < 4 * 0.5 / math.sqrt(len(r))


def test_thinning_halves_the_count():
    half = lambda t, y: np.full(np.atleast_2d(y).shape[0], 0.5)
    full = sum(len(sample_stable_jumps(unit, 1.0, 0.2, 1.0, 5, alpha=1.0, path_id=i)[0]) for i in range(300))
    thin = sum(len(sample_stable_jumps(half, 1.0, 0.2, 1.0, 5, alpha=1.0, path_id=i)[0]) for i in range(300))
    assert abs(thin / full - 0.5) < 0.03


def test_density_above_bound_is_a_contract_error():
    big = lambda t, y: np.full(np.atleast_2d(y).shape[0], 2.0)
    with pytest.raises(ContractError):
        sample_stable_jumps(big, 1.0, 0.01, 1.0, 0, alpha=1.5)
    with pytest.raises(ConfigurationError):
        sample_stable_jumps(unit, 1.0, 0.0, 1.0, 0, alpha=1.5)


def test_poisson_marks_count_and_choice():
    mk = MarkMeasure([[0.0], [1.0]], [1.0, 3.0])
    n0 = n1 = 0
    for i in range(500):
        t, k = sample_poisson_marks(mk, 1.0, 9, path_id=i)
        assert np.all(np.diff(t) > 0)
        n0 += np.sum(k == 0)
        n1 += np.sum(k == 1)
    assert abs((n0 + n1) / 500 - 4.0) < 4 * math.sqrt(4.0 / 500)
    assert abs(n1 / (n0 + n1) - 0.75) < 0.03


def test_mark_measure_validation():
    with pytest.raises(ShapeError):
        MarkMeasure([[0.0], [1.0]], [1.0])
    with pytest.raises(ConfigurationError):
        MarkMeasure([[0.0]], [0.0])


def test_events_never_collide():
    mk = MarkMeasure([[1.0]], [50.0])
    p = make_path(steps=64, seed=2, alpha=0.8, density=unit, eps_cut=0.05, marks=mk)
    times = np.concatenate([p.stable_times, p.mark_times])
    assert len(np.unique(times)) == len(times)
    assert not np.isin(p.mark_times, p.mesh).any()


def test_compensated_integral_has_mean_zero():
    f = lambda t, y: np.exp(-np.sum(np.atleast_2d(y) ** 2, axis=-1)) * (1 + t)
    vals = [compensated_integral(f, make_path(seed=4, path_id=i, alpha=1.5, density=unit, eps_cut=0.05))
            for i in range(400)]
    assert abs(np.mean(vals)) < 4 * np.std(vals) / math.sqrt(len(vals))
    mk = MarkMeasure([[0.5], [2.0]], [1.0, 2.0])
    g = lambda t, y: np.atleast_2d(y)[:, 0] * t
    vals = [compensated_integral(g, make_path(seed=4, path_id=i, marks=mk), source="mark") for i in range(400)]
    assert abs(np.mean(vals)) < 4 * np.std(vals) / math.sqrt(len(vals))


def test_compensated_integral_variance():
    # Var = T * int f^2 dnu for the deterministic integrand f = 1_{|y|<1}
    f = lambda t, y: (np.abs(np.atleast_2d(y)[:, 0]) < 1.0).astype(float)
    alpha, eps = 1.5, 0.2
    vals = [compensated_integral(f, make_path(seed=8, path_id=i, alpha=alpha, density=unit, eps_cut=eps))
            for i in range(1000)]
    var = tail_mass(alpha, eps) - tail_mass(alpha, 1.0)
    assert np.var(vals) == pytest.approx(var, rel=0.15)


def test_event_dump_columns():
    mk = MarkMeasure([[1.0, 2.0]], [5.0])
    p = make_path(seed=1, alpha=1.5, density=unit, eps_cut=0.1, marks=mk)
    buf = io.StringIO()
    dump_events(p, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "time,source,mark0,mark1,mark2"
    times = [float(l.split(",")[0]) for l in lines[1:]]
    assert times == sorted(times)
    assert len(lines) - 1 == len(p.stable_times) + len(p.mark_times)
