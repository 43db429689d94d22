"""Compare the numba kernels against the pure-numpy fallbacks.

Run:  python benchmarks/bench_kernels.py
The same script with RARESCORE_NUMBA=0 exercises only the numpy path (the
dispatch column then matches the numpy column).
"""

import time

import numpy as np

from rarescore import _kernels

SAMPLES = 2000
CLASSES = 2
WIDTHS = (100, 1000, 10000)
REPEATS = 5


def timeit(fn, *args):
    fn(*args)  # warm (JIT compile / cache touch)
    best = float("inf")
    for _ in range(REPEATS):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def main():
    rng = np.random.default_rng(0)
    print(f"numba enabled: {_kernels.NUMBA_ENABLED}")
    print(f"{'n':>6} {'kernel':>22} {'dispatch':>12} {'numpy':>12} {'speedup':>8}")
    per_sample_us = {}
    for n in WIDTHS:
        patterns = (rng.random((SAMPLES, n)) > 0.5).astype(np.uint8)
        labels = rng.integers(0, CLASSES, SAMPLES).astype(np.int64)
        counts = _kernels.count_activations(patterns, labels, CLASSES)
        by_class = np.ascontiguousarray(counts.T)

        cases = [
            ("count_activations", _kernels.count_activations,
             _kernels._count_activations_np, (patterns, labels, CLASSES)),
            ("class_numerators", _kernels.class_numerators,
             _kernels._numerators_np, (patterns, by_class, labels)),
        ]
        for name, dispatch, fallback, args in cases:
            t_dispatch = timeit(dispatch, *args)
            t_numpy = timeit(fallback, *args)
            assert np.array_equal(dispatch(*args), fallback(*args)), name
            print(
                f"{n:>6} {name:>22} {t_dispatch*1e3:>10.3f}ms {t_numpy*1e3:>10.3f}ms "
                f"{t_numpy/t_dispatch:>7.1f}x"
            )
            if name == "class_numerators":
                per_sample_us[n] = t_dispatch / SAMPLES * 1e6

    print("\nper-score cost (batch-amortized):")
    for n, us in per_sample_us.items():
        print(f"  n={n:<6} {us:8.3f} us")
    base = per_sample_us[WIDTHS[0]]
    for lo, hi in zip(WIDTHS, WIDTHS[1:]):
        growth = per_sample_us[hi] / per_sample_us[lo]
        linear = hi / lo
        print(f"  growth n={lo}->{hi}: {growth:.1f}x (linear would be {linear}x)")


if __name__ == "__main__":
    main()
