import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spide import _kernels as kn

needs_numba = pytest.mark.skipif(not kn.HAS_NUMBA, reason="numba unavailable")


@needs_numba
@given(st.integers(0, 10_000), st.integers(1, 4), st.integers(1, 5), st.sampled_from([1, 2, 3]))
def test_ou_batch_backends_agree(seed, P, M, stride):
    rng = np.random.default_rng(seed)
    K, S = 6, 12
    decay = np.exp(-rng.uniform(0, 1, K) + 1j * rng.uniform(-1, 1, K))
    load = rng.normal(size=(M, K)) + 1j * rng.normal(size=(M, K))
    dW = rng.normal(size=(P, S, M))
    a = kn.ou_batch_numpy(decay, load, dW, stride)
    b = kn.ou_batch_numba(decay, load, dW, stride)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


@needs_numba
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_jump_ou_backends_agree(seed, P):
    rng = np.random.default_rng(seed)
    K = 5
    rate = -rng.uniform(0, 3, K) + 1j * rng.uniform(-2, 2, K)
    rate[0] = 0.0
    drift = rng.normal(size=K) + 1j * rng.normal(size=K)
    counts = rng.integers(0, 6, P)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    ev_times = np.concatenate([np.sort(rng.uniform(0, 1, c)) for c in counts])
    ev_amps = rng.normal(size=(len(ev_times), K)) + 0j
    rec = np.linspace(0, 1, 9)
    a = kn.jump_ou_numpy(rate, drift, offsets, ev_times, ev_amps, rec)
    b = kn.jump_ou_numba(rate, drift, offsets, ev_times, ev_amps, rec)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_jump_ou_closed_form():
    rate = np.array([-1.0 + 0j, 0j])
    drift = np.array([2.0 + 0j, 1.0 + 0j])
    out = kn.jump_ou(rate, drift, np.array([0, 1]), np.array([0.5]), np.array([[1.0, 1.0]]) + 0j,
                     np.array([0.0, 0.5, 1.0]))
    # z(t) = 2(1 - e^-t) + e^-(t-1/2) 1_{t >= 1/2}; second mode integrates drift
    np.testing.assert_allclose(out[0, 1], [2 * (1 - np.exp(-0.5)) + 1, 1.5], rtol=1e-14)
    np.testing.assert_allclose(out[0, 2], [2 * (1 - np.exp(-1)) + np.exp(-0.5), 2.0], rtol=1e-14)


def test_env_flag_selects_numpy():
    env = dict(os.environ, SPIDE_NO_NUMBA="1")
    r = subprocess.run([sys.executable, "-c", "from spide import _kernels as k; print(k.BACKEND, k.HAS_NUMBA)"],
                       env=env, capture_output=True, text=True, check=True)
    assert r.stdout.split() == ["numpy", "False"]
