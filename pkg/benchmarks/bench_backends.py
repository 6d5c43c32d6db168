"""Benchmark: compiled kernels against the pure-numpy fallback.

Usage: python benchmarks/bench_backends.py
"""

import time

import numpy as np

from crcterm.backend import _corepy

try:
    from crcterm.backend import _core
except ImportError:
    _core = None


def timeit(fn, *args, repeat=5):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    rng = np.random.default_rng(0)
    cases = []

    # flow recursions: a wide pin set over a long horizon
    wu = 1j * np.linspace(-8, 8, 33)
    wv = np.zeros(33, dtype=complex)
    cases.append(("vasicek_flow 33x10000",
                  lambda m: m.vasicek_flow(wu, wv, 0.3, 0.012, 0.008, 10_000)))
    cases.append(("heston_flow  33x10000 (2 substeps)",
                  lambda m: m.heston_flow(wu, wv, 3.0, 0.04, 0.4, -0.6,
                                          1 / 252, 2, 10_000)))

    # batched surface update: ensemble-sized and long-horizon single path
    for (N, G, H) in ((20_000, 11, 12), (1, 18, 10_000)):
        theta = (rng.normal(size=(N, G, H))
                 + 1j * rng.normal(size=(N, G, H)))
        tabs = [rng.normal(size=(2, G, H - 1))
                + 1j * rng.normal(size=(2, G, H - 1)) for _ in range(3)]
        sidx = rng.integers(0, 2, size=N)
        y = rng.normal(size=N)
        dy = rng.normal(size=N)
        cases.append((f"crc_surface_step N={N} G={G} H={H}",
                      lambda m, a=(theta, *tabs, sidx, y, dy):
                      m.crc_surface_step(*a)))

    print(f"{'kernel':<38s} {'numpy':>10s} {'cython':>10s} {'speedup':>8s}")
    for name, call in cases:
        t_py = timeit(call, _corepy)
        if _core is not None:
            t_cy = timeit(call, _core)
            print(f"{name:<38s} {t_py * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
                  f"{t_py / t_cy:>7.2f}x")
        else:
            print(f"{name:<38s} {t_py * 1e3:>8.2f}ms {'n/a':>10s} {'':>8s}")


if __name__ == "__main__":
    main()
