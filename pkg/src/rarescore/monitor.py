"""Run-time trust monitor: a cumulative activation matrix packaged with a
pre-calculated Tukey threshold, persistable to a single file.

assess() scores an incoming prediction's activation pattern and returns an
accept/refer verdict: refer means the sample looks unlike the data the
model was trained on and deserves a second opinion.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .activation import (
    CumulativeActivationMatrix,
    TukeyThreshold,
    parse_matrix_lines,
    save_matrix,
    score,
    tukey_threshold,
)
from .errors import FormatError, UndefinedScoreError

THRESHOLD_BASES = ("training_scores", "test_scores")


@dataclass(frozen=True)
class TrustDecision:
    """Outcome for one assessed prediction.

    score is None only when it was undefined (zero activation column); that
    case fails safe as refer with the error recorded.
    """

    verdict: str  # "accept" | "refer"
    tau_used: float
    score: float | None
    error: str | None = None


@dataclass(frozen=True)
class ScoreMonitor:
    matrix: CumulativeActivationMatrix
    threshold: TukeyThreshold
    threshold_basis: str
    model_fingerprint: int

    def __post_init__(self):
        if self.threshold_basis not in THRESHOLD_BASES:
            raise ValueError(f"threshold_basis must be one of {THRESHOLD_BASES}")


def fingerprint_bytes(data: bytes) -> int:
    """64-bit content hash (BLAKE2b, 8-byte digest, big-endian)."""
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


def fingerprint_file(path) -> int:
    with open(path, "rb") as f:
        return fingerprint_bytes(f.read())


def build_monitor(
    matrix: CumulativeActivationMatrix,
    reference_scores,
    basis: str = "training_scores",
    k_fence: float = 1.5,
    model_fingerprint: int = 0,
) -> ScoreMonitor:
    """Pre-calculate the acceptance threshold from reference scores.

    The basis (training or test score distribution) is recorded verbatim as
    provenance; both are supported because either distribution can be a
    defensible reference.
    """
    threshold = tukey_threshold(reference_scores, k_fence=k_fence)
    return ScoreMonitor(
        matrix=matrix,
        threshold=threshold,
        threshold_basis=basis,
        model_fingerprint=model_fingerprint,
    )


def assess(monitor: ScoreMonitor, pattern, predicted_class: int) -> TrustDecision:
    """Score one activation pattern and decide accept/refer.

    Refer iff score < tau (strict): a sample scoring exactly tau is
    trusted. An undefined score surfaces as refer-with-error, never as a
    silent accept.
    """
    tau = monitor.threshold.tau
    try:
        value = score(pattern, monitor.matrix, predicted_class)
    except UndefinedScoreError as exc:
        return TrustDecision(verdict="refer", tau_used=tau, score=None, error=str(exc))
    verdict = "refer" if value < tau else "accept"
    return TrustDecision(verdict=verdict, tau_used=tau, score=value)


def save_monitor(monitor: ScoreMonitor, path) -> None:
    """Matrix block plus threshold and fingerprint lines.

    Threshold reals are serialized as hex floats so the round-trip is
    bit-exact.
    """
    save_matrix(monitor.matrix, path)
    t = monitor.threshold
    with open(path, "ab") as f:
        f.write(
            (
                f"THRESHOLD tau={float(t.tau).hex()} q1={float(t.q1).hex()} "
                f"q3={float(t.q3).hex()} k_fence={float(t.k_fence).hex()} "
                f"basis={monitor.threshold_basis}\n"
                f"MODEL fp={monitor.model_fingerprint:016x}\n"
            ).encode("utf-8")
        )


def load_monitor(path) -> ScoreMonitor:
    with open(path, "rb") as f:
        lines = f.read().decode("utf-8").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 6:
        raise FormatError(f"{path}: too short to hold a monitor")
    matrix = parse_matrix_lines(lines[:-2], where=str(path))
    if len(lines) != 4 + matrix.n + 2:
        raise FormatError(f"{path}: unexpected line count for n={matrix.n}")

    threshold_line = lines[-2]
    if not threshold_line.startswith("THRESHOLD "):
        raise FormatError(f"{path}: expected THRESHOLD line, got {threshold_line!r}")
    try:
        fields = dict(part.split("=", 1) for part in threshold_line.split()[1:])
        threshold = TukeyThreshold(
            tau=float.fromhex(fields["tau"]),
            q1=float.fromhex(fields["q1"]),
            q3=float.fromhex(fields["q3"]),
            k_fence=float.fromhex(fields["k_fence"]),
        )
        basis = fields["basis"]
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: bad THRESHOLD line: {exc}") from exc
    if basis not in THRESHOLD_BASES:
        raise FormatError(f"{path}: unknown threshold basis {basis!r}")

    model_line = lines[-1]
    if not model_line.startswith("MODEL fp="):
        raise FormatError(f"{path}: model fingerprint line absent")
    fp_text = model_line[len("MODEL fp="):]
    if len(fp_text) != 16:
        raise FormatError(f"{path}: fingerprint must be 16 hex digits, got {fp_text!r}")
    try:
        fingerprint = int(fp_text, 16)
    except ValueError as exc:
        raise FormatError(f"{path}: fingerprint must be 16 hex digits, got {fp_text!r}") from exc

    return ScoreMonitor(
        matrix=matrix,
        threshold=threshold,
        threshold_basis=basis,
        model_fingerprint=fingerprint,
    )
