"""Hot inner loops: activation counting and commonality-score numerators.

Two implementations of each kernel produce bit-identical results:

* a numba ``@njit`` loop (default when numba imports), and
* a vectorized pure-numpy fallback.

Set ``RARESCORE_NUMBA=0`` in the environment to force the numpy path.
All accumulation is exact int64 arithmetic, so the paths agree exactly;
``benchmarks/bench_kernels.py`` compares their speed.

Callers must pass C-contiguous uint8 patterns and int64 counts; the public
wrappers in ``activation`` normalize dtypes before dispatching here.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_wanted() -> bool:
    return os.environ.get("RARESCORE_NUMBA", "1").strip().lower() not in ("0", "false", "off")


try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None

NUMBA_ENABLED = njit is not None and _numba_wanted()


def _count_activations_loop(patterns, labels, k):
    n_samples, n = patterns.shape
    # accumulate class-major so each sample updates one contiguous row,
    # branchless so the loop vectorizes
    by_class = np.zeros((k, n), dtype=np.int64)
    for s in range(n_samples):
        row = by_class[labels[s]]
        for i in range(n):
            row[i] += patterns[s, i]
    return by_class.T.copy()


def _count_activations_np(patterns, labels, k):
    n = patterns.shape[1]
    counts = np.zeros((n, k), dtype=np.int64)
    for j in range(k):
        rows = patterns[labels == j]
        if rows.shape[0]:
            counts[:, j] = rows.sum(axis=0, dtype=np.int64)
    return counts


def _numerators_loop(patterns, counts_by_class, classes):
    n_samples, n = patterns.shape
    out = np.empty(n_samples, dtype=np.int64)
    for s in range(n_samples):
        row = counts_by_class[classes[s]]
        acc = 0
        for i in range(n):
            if patterns[s, i] != 0:
                acc += row[i]
        out[s] = acc
    return out


def _numerators_np(patterns, counts_by_class, classes):
    n_samples = patterns.shape[0]
    out = np.empty(n_samples, dtype=np.int64)
    for j in range(counts_by_class.shape[0]):
        rows = classes == j
        if rows.any():
            out[rows] = patterns[rows].astype(np.int64) @ counts_by_class[j]
    return out


def _numerator_one_loop(pattern, counts_row):
    # validation is fused into the hot loop: -1 flags a non-binary pattern
    acc = 0
    for i in range(pattern.shape[0]):
        b = pattern[i]
        if b > 1:
            return -1
        if b:
            acc += counts_row[i]
    return acc


def _numerator_one_np(pattern, counts_row):
    if pattern.max() > 1:
        return -1
    return int(pattern.astype(np.int64) @ counts_row)


if NUMBA_ENABLED:
    count_activations = njit(cache=True)(_count_activations_loop)
    class_numerators = njit(cache=True)(_numerators_loop)
    pattern_numerator = njit(cache=True)(_numerator_one_loop)
else:
    count_activations = _count_activations_np
    class_numerators = _numerators_np
    pattern_numerator = _numerator_one_np


def warmup() -> None:
    """Trigger JIT compilation on tiny inputs so timed paths are steady."""
    patterns = np.array([[1, 0], [1, 1]], dtype=np.uint8)
    labels = np.zeros(2, dtype=np.int64)
    counts = count_activations(patterns, labels, 1)
    class_numerators(patterns, np.ascontiguousarray(counts.T), labels)
    pattern_numerator(patterns[0], np.ascontiguousarray(counts[:, 0]))
