"""Hot inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature. The numba path
is used unless ``SPIDE_NO_NUMBA`` is set to a truthy value or numba cannot
be imported; ``BACKEND`` reports which one is active. Both paths are
exercised by the test-suite and compared in ``benchmarks/bench_kernels.py``.
"""

import os

import numpy as np

_DISABLED = os.environ.get("SPIDE_NO_NUMBA", "").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# --------------------------------------------------------------------------
# Linear recursion z_{k+1} = e_k * z_k + load . dW_k, batched over paths.
# --------------------------------------------------------------------------

def ou_batch_numpy(decay, load, dW, stride):
    """Propagate ``z <- decay * z + dW @ load`` and record every ``stride`` steps.

    decay: (K,) complex, load: (M, K) complex, dW: (P, S, M) float.
    Returns (P, S // stride + 1, K) complex; slot 0 is the zero initial state.
    """
    P, S, M = dW.shape
    K = decay.shape[0]
    nrec = S // stride + 1
    out = np.zeros((P, nrec, K), dtype=np.complex128)
    z = np.zeros((P, K), dtype=np.complex128)
    for k in range(S):
        z = z * decay + dW[:, k, :] @ load
        if (k + 1) % stride == 0:
            out[:, (k + 1) // stride, :] = z
    return out


def jump_ou_numpy(rate, drift, offsets, ev_times, ev_amps, rec_times):
    """Exact solution of dz = (rate z + drift) dt + jumps, batched over paths.

    Path ``p`` owns events ``offsets[p]:offsets[p+1]`` with times ``ev_times``
    and complex amplitudes ``ev_amps`` (n_events, K). Values are recorded at
    ``rec_times`` (increasing, starting at 0) with cadlag convention.
    """
    P = offsets.shape[0] - 1
    K = rate.shape[0]
    R = rec_times.shape[0]
    out = np.zeros((P, R, K), dtype=np.complex128)
    for p in range(P):
        z = np.zeros(K, dtype=np.complex128)
        t = 0.0
        e = offsets[p]
        stop = offsets[p + 1]
        for r in range(R):
            tr = rec_times[r]
            while e < stop and ev_times[e] <= tr:
                z = _advance(z, rate, drift, ev_times[e] - t)
                t = ev_times[e]
                z = z + ev_amps[e]
                e += 1
            z = _advance(z, rate, drift, tr - t)
            t = tr
            out[p, r] = z
    return out


def _advance(z, rate, drift, dt):
    if dt <= 0.0:
        return z
    ez = np.exp(rate * dt)
    return ez * z + phi1(rate, dt) * drift


def phi1(rate, dt):
    """(exp(rate*dt) - 1) / rate, continuous at rate = 0."""
    rate = np.asarray(rate, dtype=np.complex128)
    x = rate * dt
    small = np.abs(x) < 1e-8
    safe = np.where(small, 1.0, x)
    out = np.where(small, dt * (1.0 + 0.5 * x), dt * np.expm1(safe) / safe)
    return out


if HAS_NUMBA:

    @njit(cache=True, nogil=True)
    def _ou_batch_nb(decay, load, dW, stride):
        P, S, M = dW.shape
        K = decay.shape[0]
        nrec = S // stride + 1
        out = np.zeros((P, nrec, K), dtype=np.complex128)
        z = np.zeros(K, dtype=np.complex128)
        for p in range(P):
            z[:] = 0.0
            for k in range(S):
                for j in range(K):
                    acc = z[j] * decay[j]
                    for m in range(M):
                        acc += dW[p, k, m] * load[m, j]
                    z[j] = acc
                if (k + 1) % stride == 0:
                    r = (k + 1) // stride
                    for j in range(K):
                        out[p, r, j] = z[j]
        return out

    @njit(cache=True, nogil=True)
    def _phi1_nb(rate, dt):
        x = rate * dt
        if abs(x) < 1e-8:
            return dt * (1.0 + 0.5 * x)
        return dt * (np.exp(x) - 1.0) / x

    @njit(cache=True, nogil=True)
    def _jump_ou_nb(rate, drift, offsets, ev_times, ev_amps, rec_times):
        P = offsets.shape[0] - 1
        K = rate.shape[0]
        R = rec_times.shape[0]
        out = np.zeros((P, R, K), dtype=np.complex128)
        z = np.zeros(K, dtype=np.complex128)
        for p in range(P):
            z[:] = 0.0
            t = 0.0
            e = offsets[p]
            stop = offsets[p + 1]
            for r in range(R):
                tr = rec_times[r]
                while True:
                    if e < stop and ev_times[e] <= tr:
                        target = ev_times[e]
                    else:
                        target = tr
                    dt = target - t
                    if dt > 0.0:
                        for j in range(K):
                            z[j] = np.exp(rate[j] * dt) * z[j] + _phi1_nb(rate[j], dt) * drift[j]
                    t = target
                    if e < stop and ev_times[e] <= tr:
                        for j in range(K):
                            z[j] += ev_amps[e, j]
                        e += 1
                    else:
                        break
                for j in range(K):
                    out[p, r, j] = z[j]
        return out

    def ou_batch_numba(decay, load, dW, stride):
        return _ou_batch_nb(
            np.ascontiguousarray(decay, dtype=np.complex128),
            np.ascontiguousarray(load, dtype=np.complex128),
            np.ascontiguousarray(dW, dtype=np.float64),
            int(stride),
        )

    def jump_ou_numba(rate, drift, offsets, ev_times, ev_amps, rec_times):
        return _jump_ou_nb(
            np.ascontiguousarray(rate, dtype=np.complex128),
            np.ascontiguousarray(drift, dtype=np.complex128),
            np.ascontiguousarray(offsets, dtype=np.int64),
            np.ascontiguousarray(ev_times, dtype=np.float64),
            np.ascontiguousarray(ev_amps, dtype=np.complex128).reshape(len(ev_times), len(rate)),
            np.ascontiguousarray(rec_times, dtype=np.float64),
        )

    ou_batch = ou_batch_numba
    jump_ou = jump_ou_numba
    BACKEND = "numba"
else:
    ou_batch_numba = None
    jump_ou_numba = None
    ou_batch = ou_batch_numpy
    jump_ou = jump_ou_numpy
    BACKEND = "numpy"
