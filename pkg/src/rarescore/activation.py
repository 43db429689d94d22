"""Commonality scoring: activation patterns, the cumulative activation
matrix, per-sample scores, quartile statistics and the Tukey-fence cutoff.

The score of a sample is the ratio between the training-time activation
counts of the neurons that fired for it and the total activation counts of
its predicted class. Low scores mark samples that look like little of the
training data.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .errors import FormatError, UndefinedScoreError

MATRIX_MAGIC = "RARITY-MATRIX v1"


@dataclass(frozen=True)
class ScoredSample:
    """One sample's scoring record."""

    sample_id: int
    predicted_class: int
    score: float
    true_label: int | None = None
    subclass: int | None = None


@dataclass(frozen=True)
class TukeyThreshold:
    """Outlier cutoff tau = q1 - k_fence * (q3 - q1)."""

    tau: float
    q1: float
    q3: float
    k_fence: float


@dataclass(frozen=True)
class CumulativeActivationMatrix:
    """Per-class activation counts of the penultimate layer.

    counts[i, j] is the number of training samples of class j for which
    neuron i fired. Built once per trained model; immutable afterwards
    (scoring is read-only and thread-safe).
    """

    counts: np.ndarray  # (n, k) int64
    class_sample_counts: np.ndarray  # (k,) int64
    class_names: tuple[str, ...]
    # (k, n) C-contiguous copy so per-class rows are cache-friendly to score
    counts_by_class: np.ndarray = field(init=False, repr=False, compare=False)
    column_sums: np.ndarray = field(init=False, repr=False, compare=False)
    _column_sums_int: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        raw_counts = np.asarray(self.counts)
        raw_per_class = np.asarray(self.class_sample_counts)
        counts = np.ascontiguousarray(raw_counts, dtype=np.int64)
        per_class = np.ascontiguousarray(raw_per_class, dtype=np.int64)
        for raw, cast in ((raw_counts, counts), (raw_per_class, per_class)):
            if raw.dtype.kind not in "iu" and not np.array_equal(cast, raw):
                raise ValueError("activation counts must be integers")
        if counts.ndim != 2:
            raise ValueError("counts must be a 2-D (n, k) array")
        n, k = counts.shape
        if per_class.shape != (k,):
            raise ValueError(f"class_sample_counts must have length k={k}")
        if len(self.class_names) != k:
            raise ValueError(f"class_names must have length k={k}")
        if (counts < 0).any() or (per_class < 0).any():
            raise ValueError("activation counts must be non-negative")
        if (counts > per_class[np.newaxis, :]).any():
            raise ValueError("counts[i, j] cannot exceed class_sample_counts[j]")
        counts.setflags(write=False)
        per_class.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_sample_counts", per_class)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        by_class = np.ascontiguousarray(counts.T)
        by_class.setflags(write=False)
        object.__setattr__(self, "counts_by_class", by_class)
        sums = counts.sum(axis=0, dtype=np.int64)
        sums.setflags(write=False)
        object.__setattr__(self, "column_sums", sums)
        object.__setattr__(self, "_column_sums_int", tuple(int(s) for s in sums))

    @property
    def n(self) -> int:
        return self.counts.shape[0]

    @property
    def k(self) -> int:
        return self.counts.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CumulativeActivationMatrix):
            return NotImplemented
        return (
            self.class_names == other.class_names
            and np.array_equal(self.counts, other.counts)
            and np.array_equal(self.class_sample_counts, other.class_sample_counts)
        )


def default_class_names(k: int) -> tuple[str, ...]:
    return tuple(f"c{j}" for j in range(k))


def binarize(raw_activations) -> np.ndarray:
    """Binary activation pattern of a raw penultimate-layer output.

    Bit i is 1 iff raw_activations[i] > 0, strictly: ReLU outputs are
    exactly 0 when inactive, so no epsilon band is applied.
    """
    raw = np.asarray(raw_activations, dtype=np.float64)
    if raw.ndim != 1 or raw.size == 0:
        raise ValueError("raw activations must be a non-empty 1-D vector")
    return (raw > 0.0).astype(np.uint8)


def binarize_batch(raw_rows: np.ndarray) -> np.ndarray:
    """Row-wise binarize for a (samples, n) activation block."""
    raw = np.asarray(raw_rows, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] == 0:
        raise ValueError("raw activations must be a non-empty 2-D block")
    return (raw > 0.0).astype(np.uint8)


def _as_pattern(pattern, n: int | None = None) -> np.ndarray:
    raw = np.asarray(pattern)
    bits = np.ascontiguousarray(raw, dtype=np.uint8)
    if bits.ndim != 1 or bits.size == 0:
        raise ValueError("activation pattern must be a non-empty 1-D vector")
    # max-check suffices for uint8 input; other dtypes also get an equality
    # check so fractional or negative values cannot truncate to valid bits
    if bits.max() > 1 or (raw.dtype != np.uint8 and not np.array_equal(bits, raw)):
        raise ValueError("activation pattern bits must be 0 or 1")
    if n is not None and bits.shape[0] != n:
        raise ValueError(f"pattern length {bits.shape[0]} does not match matrix n={n}")
    return bits


def build_matrix_arrays(
    patterns: np.ndarray,
    labels: np.ndarray,
    k: int,
    class_names: Sequence[str] | None = None,
) -> CumulativeActivationMatrix:
    """Build the matrix from a (samples, n) pattern block and label vector."""
    raw = np.asarray(patterns)
    pats = np.ascontiguousarray(raw, dtype=np.uint8)
    labs = np.ascontiguousarray(labels, dtype=np.int64)
    if pats.ndim != 2 or pats.shape[0] == 0 or pats.shape[1] == 0:
        raise ValueError("need a non-empty (samples, n) pattern block")
    if labs.shape != (pats.shape[0],):
        raise ValueError("labels must align with patterns")
    if labs.min() < 0 or labs.max() >= k:
        bad = int(labs.min()) if labs.min() < 0 else int(labs.max())
        raise ValueError(f"class label {bad} out of range for k={k}")
    if pats.max() > 1 or (raw.dtype != np.uint8 and not np.array_equal(pats, raw)):
        raise ValueError("activation pattern bits must be 0 or 1")
    counts = _kernels.count_activations(pats, labs, k)
    per_class = np.bincount(labs, minlength=k).astype(np.int64)
    names = tuple(class_names) if class_names is not None else default_class_names(k)
    return CumulativeActivationMatrix(counts, per_class, names)


def build_matrix(
    samples: Iterable[tuple[np.ndarray, int]],
    n: int,
    k: int,
    class_names: Sequence[str] | None = None,
) -> CumulativeActivationMatrix:
    """Build the matrix from a stream of (pattern, class_label) pairs.

    Order-independent: any permutation of the stream yields the same
    matrix. Raises on an empty stream, out-of-range labels, or patterns
    whose length differs from n.
    """
    rows = []
    labels = []
    for pattern, label in samples:
        rows.append(_as_pattern(pattern, n))
        labels.append(int(label))
    if not rows:
        raise ValueError("cannot build a matrix from an empty sample stream")
    return build_matrix_arrays(np.stack(rows), np.asarray(labels), k, class_names)


def merge_matrices(
    a: CumulativeActivationMatrix, b: CumulativeActivationMatrix
) -> CumulativeActivationMatrix:
    """Elementwise sum of two partial builds (associative and commutative).

    Lets the matrix be built over partitions of the training stream and
    combined afterwards.
    """
    if a.n != b.n or a.k != b.k:
        raise ValueError(
            f"matrix shapes differ: ({a.n}, {a.k}) vs ({b.n}, {b.k})"
        )
    if a.class_names != b.class_names:
        raise ValueError("matrices disagree on class names")
    return CumulativeActivationMatrix(
        a.counts + b.counts,
        a.class_sample_counts + b.class_sample_counts,
        a.class_names,
    )


def score(
    pattern, matrix: CumulativeActivationMatrix, predicted_class: int
) -> float:
    """Commonality score of one pattern against the predicted class column.

    score = sum_i pattern[i] * counts[i, j] / sum_i counts[i, j], always in
    [0, 1] because the numerator is a sub-sum of the denominator. Runs in
    O(n).
    """
    if not 0 <= predicted_class < matrix.k:
        raise ValueError(f"class {predicted_class} out of range for k={matrix.k}")
    raw = np.asarray(pattern)
    if raw.dtype == np.uint8 and raw.ndim == 1 and raw.flags.c_contiguous:
        bits = raw  # hot path: binarize() output needs no conversion
        if bits.shape[0] != matrix.n:
            raise ValueError(
                f"pattern length {bits.shape[0]} does not match matrix n={matrix.n}"
            )
    else:
        bits = _as_pattern(pattern, matrix.n)
    denom = matrix._column_sums_int[predicted_class]
    if denom == 0:
        raise UndefinedScoreError(
            f"class {predicted_class} never activated any neuron during the build"
        )
    num = _kernels.pattern_numerator(bits, matrix.counts_by_class[predicted_class])
    if num < 0:
        raise ValueError("activation pattern bits must be 0 or 1")
    return num / denom


def score_batch(
    patterns: np.ndarray,
    matrix: CumulativeActivationMatrix,
    predicted_classes: np.ndarray,
) -> np.ndarray:
    """Vector of scores for a (samples, n) pattern block."""
    raw = np.asarray(patterns)
    pats = np.ascontiguousarray(raw, dtype=np.uint8)
    classes = np.ascontiguousarray(predicted_classes, dtype=np.int64)
    if pats.ndim != 2 or pats.shape[1] != matrix.n:
        raise ValueError(f"patterns must be (samples, {matrix.n})")
    if pats.size and (
        pats.max() > 1 or (raw.dtype != np.uint8 and not np.array_equal(pats, raw))
    ):
        raise ValueError("activation pattern bits must be 0 or 1")
    if classes.shape != (pats.shape[0],):
        raise ValueError("predicted_classes must align with patterns")
    if classes.size and (classes.min() < 0 or classes.max() >= matrix.k):
        raise ValueError("predicted class out of range")
    denoms = matrix.column_sums[classes]
    if (denoms == 0).any():
        j = int(classes[np.argmax(denoms == 0)])
        raise UndefinedScoreError(
            f"class {j} never activated any neuron during the build"
        )
    nums = _kernels.class_numerators(pats, matrix.counts_by_class, classes)
    return nums / denoms


def quartiles(scores) -> tuple[float, float]:
    """First and third quartiles by linear interpolation of order statistics.

    Sorted ascending, the p-quantile sits at position p * (N - 1); fractional
    positions interpolate linearly between the neighbouring order statistics.
    Kept as a standalone function so a different estimator (e.g. Tukey's
    hinges) can be swapped in.
    """
    xs = np.sort(np.asarray(scores, dtype=np.float64))
    if xs.size == 0:
        raise ValueError("quartiles of an empty list are undefined")

    def at(p: float) -> float:
        pos = p * (xs.size - 1)
        lo = int(pos)
        frac = pos - lo
        if frac == 0.0:
            return float(xs[lo])
        return float(xs[lo] + frac * (xs[lo + 1] - xs[lo]))

    return at(0.25), at(0.75)


def tukey_threshold(scores, k_fence: float = 1.5, quartile_estimator=quartiles) -> TukeyThreshold:
    """Lower Tukey fence over a score distribution.

    tau = q1 - k_fence * (q3 - q1). tau may be negative, in which case
    nothing is flagged since scores are non-negative.
    """
    if k_fence <= 0:
        raise ValueError("k_fence must be positive")
    q1, q3 = quartile_estimator(scores)
    return TukeyThreshold(tau=q1 - k_fence * (q3 - q1), q1=q1, q3=q3, k_fence=k_fence)


def partition_outliers(
    samples: Sequence[ScoredSample], tau: float
) -> tuple[list[ScoredSample], list[ScoredSample]]:
    """Split samples into (below tau, at or above tau), preserving order.

    Strictly below: a sample scoring exactly tau is trusted.
    """
    below: list[ScoredSample] = []
    at_or_above: list[ScoredSample] = []
    for s in samples:
        (below if s.score < tau else at_or_above).append(s)
    return below, at_or_above


def save_matrix(matrix: CumulativeActivationMatrix, path) -> None:
    """Write the versioned line-based matrix file, bit-exact."""
    for name in matrix.class_names:
        if "," in name or any(c.isspace() for c in name):
            raise ValueError(f"class name {name!r} may not contain commas or whitespace")
    lines = [
        MATRIX_MAGIC,
        f"n={matrix.n} k={matrix.k}",
        "classes=" + ",".join(matrix.class_names),
        "class_samples=" + ",".join(str(int(c)) for c in matrix.class_sample_counts),
    ]
    lines.extend(" ".join(str(int(v)) for v in row) for row in matrix.counts)
    with open(path, "wb") as f:
        f.write(("\n".join(lines) + "\n").encode("utf-8"))


def parse_matrix_lines(lines: list[str], where: str = "matrix file") -> CumulativeActivationMatrix:
    """Parse the matrix block (header + n rows) from decoded lines."""
    if not lines or lines[0] != MATRIX_MAGIC:
        got = lines[0] if lines else "<empty>"
        raise FormatError(f"{where}: expected version line {MATRIX_MAGIC!r}, got {got!r}")
    if len(lines) < 4:
        raise FormatError(f"{where}: truncated header")
    try:
        dims = dict(part.split("=", 1) for part in lines[1].split())
        n, k = int(dims["n"]), int(dims["k"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"{where}: bad dimension line {lines[1]!r}") from exc
    if n < 1 or k < 1:
        raise FormatError(f"{where}: dimensions must be positive, got n={n} k={k}")
    if not lines[2].startswith("classes="):
        raise FormatError(f"{where}: expected classes= line, got {lines[2]!r}")
    names = tuple(lines[2][len("classes="):].split(","))
    if len(names) != k:
        raise FormatError(f"{where}: expected {k} class names, got {len(names)}")
    if not lines[3].startswith("class_samples="):
        raise FormatError(f"{where}: expected class_samples= line, got {lines[3]!r}")
    try:
        per_class = np.array(
            [int(v) for v in lines[3][len("class_samples="):].split(",")], dtype=np.int64
        )
    except ValueError as exc:
        raise FormatError(f"{where}: bad class_samples line") from exc
    if per_class.shape != (k,):
        raise FormatError(f"{where}: expected {k} class sample counts")
    if len(lines) < 4 + n:
        raise FormatError(f"{where}: expected {n} count rows, found {len(lines) - 4}")
    counts = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        fields = lines[4 + i].split()
        if len(fields) != k:
            raise FormatError(f"{where}: row {i} has {len(fields)} fields, expected {k}")
        try:
            counts[i] = [int(v) for v in fields]
        except ValueError as exc:
            raise FormatError(f"{where}: row {i} holds a non-integer field") from exc
    try:
        return CumulativeActivationMatrix(counts, per_class, names)
    except ValueError as exc:
        raise FormatError(f"{where}: {exc}") from exc


def load_matrix(path) -> CumulativeActivationMatrix:
    """Read a matrix file written by save_matrix, rejecting unknown versions."""
    with open(path, "rb") as f:
        text = f.read().decode("utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    matrix = parse_matrix_lines(lines, where=str(path))
    if len(lines) != 4 + matrix.n:
        raise FormatError(f"{path}: {len(lines) - 4 - matrix.n} unexpected trailing lines")
    return matrix
