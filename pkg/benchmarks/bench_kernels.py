"""Time the numba and pure-numpy backends of the hot kernels.

    python benchmarks/bench_kernels.py [--paths 1000] [--repeat 3]

Both backends are imported in one process; the numba timings exclude the
first (compiling) call. Results are printed and checked for agreement.
"""

import argparse
import time

import numpy as np

from spide import _kernels as kn


def _best(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(P, rng):
    K, S, M = 4, 2048, 2
    decay = np.exp(-0.01 * rng.uniform(0, 1, K) + 0.01j * rng.uniform(-1, 1, K))
    load = rng.normal(size=(M, K)) + 1j * rng.normal(size=(M, K))
    dW = rng.normal(size=(P, S, M)) * np.sqrt(1 / S)
    yield "ou_batch", (decay, load, dW, 16), kn.ou_batch_numpy, kn.ou_batch_numba

    rate = -rng.uniform(0, 10, K) + 1j * rng.uniform(-5, 5, K)
    drift = rng.normal(size=K) + 0j
    counts = rng.poisson(20, P)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    ev_t = np.concatenate([np.sort(rng.uniform(0, 1, c)) for c in counts])
    ev_a = rng.normal(size=(len(ev_t), K)) + 0j
    rec = np.linspace(0, 1, 129)
    yield "jump_ou", (rate, drift, offsets, ev_t, ev_a, rec), kn.jump_ou_numpy, kn.jump_ou_numba


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"active backend: {kn.BACKEND}; paths = {args.paths}")
    print(f"{'kernel':<10} {'numpy [s]':>10} {'numba [s]':>10} {'speed-up':>9}  max |diff|")
    for name, a, f_np, f_nb in cases(args.paths, rng):
        t_np, r_np = _best(lambda: f_np(*a), args.repeat)
        if f_nb is None:
            print(f"{name:<10} {t_np:10.4f} {'n/a':>10}")
            continue
        f_nb(*a)
        t_nb, r_nb = _best(lambda: f_nb(*a), args.repeat)
        print(f"{name:<10} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f}x  {np.abs(r_np - r_nb).max():.1e}")


if __name__ == "__main__":
    main()
