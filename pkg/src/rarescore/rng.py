"""Deterministic pseudo-randomness for every seeded operation in the package.

The generator is splitmix64: a 64-bit counter advanced by the golden-ratio
increment, with each output passed through a shift/multiply finalizer.

    state    <- (state + 0x9E3779B97F4A7C15) mod 2^64
    output   <- mix64(state)

    mix64(z) :  z ^= z >> 30;  z *= 0xBF58476D1CE4E5B9  (mod 2^64)
                z ^= z >> 27;  z *= 0x94D049BB133111EB  (mod 2^64)
                z ^= z >> 31

Two formulas, no platform-dependent behaviour: any implementation that
follows them reproduces the exact same streams, which is what makes
rarefaction, oversampling, weight init and batch shuffles replayable from
a recorded seed.
"""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB


def mix64(z: int) -> int:
    """splitmix64 finalizer on a 64-bit integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *parts: int) -> int:
    """Derive an independent child seed from a master seed and integer tags.

    Chain of mix64 applications: s0 = mix64(master), then for each tag p,
    s <- mix64(s xor (p + GOLDEN)). Used to give every (digit, trial,
    purpose) its own reproducible stream.
    """
    s = mix64(master & MASK64)
    for p in parts:
        s = mix64(s ^ ((p + GOLDEN) & MASK64))
    return s


class SplitMix64:
    """Stateful splitmix64 stream with scalar and vectorized output."""

    def __init__(self, seed: int):
        self._state = seed & MASK64

    def next_u64(self) -> int:
        self._state = (self._state + GOLDEN) & MASK64
        return mix64(self._state)

    def next_float(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def u64_array(self, count: int) -> np.ndarray:
        """The next `count` outputs as uint64, computed vectorized.

        Identical to calling next_u64() `count` times: states are
        state + GOLDEN * (1..count) mod 2^64, finalized elementwise.
        """
        steps = np.arange(1, count + 1, dtype=np.uint64)
        z = np.uint64(self._state) + np.uint64(GOLDEN) * steps
        self._state = (self._state + GOLDEN * count) & MASK64
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
        return z ^ (z >> np.uint64(31))

    def float_array(self, count: int) -> np.ndarray:
        """The next `count` uniform floats in [0, 1)."""
        return (self.u64_array(count) >> np.uint64(11)) * 2.0**-53

    def index(self, n: int) -> int:
        """Uniform index in [0, n): floor of a [0,1) draw scaled by n."""
        if n <= 0:
            raise ValueError("index() needs n >= 1")
        return min(int(self.next_float() * n), n - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n): argsort of n random keys.

        Stable sort breaks the (astronomically unlikely) key ties by
        position, so the result depends only on the stream.
        """
        return np.argsort(self.u64_array(n), kind="stable")
