"""Experiment drivers and analyses over scored samples.

Covers the rare-digit trial study (train on a rarefied set, compare the
rare digit's misclassification rate against its rate when common), the
decile breakdown of score vs misclassification, the outlier-subset
comparison, and the lowest/highest-score extremes reports that feed manual
review.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .activation import (
    CumulativeActivationMatrix,
    ScoredSample,
    binarize_batch,
    score_batch,
)
from .data import LabeledDataset, RarefactionSpec, rarify
from .net import (
    FeedforwardModel,
    TrainConfig,
    default_arch,
    evaluate,
    forward_batch,
    init_model,
    train,
)
from .rng import derive_seed


class UndefinedRatioError(ValueError):
    """rate(common) is zero, so the rare/common ratio is undefined."""


@dataclass(frozen=True)
class RarityTrialResult:
    """One (digit, trial) outcome: the rarefied digit's test
    misclassification rate plus the rates of the digits left common."""

    digit: int
    trial: int
    rate_rare: float
    rate_common_per_digit: dict[int, float]


@dataclass(frozen=True)
class RarityDigitSummary:
    digit: int
    mean_rate_rare: float
    mean_rate_common: float
    ratio: float


@dataclass(frozen=True)
class DecileReport:
    """Ten score-ordered groups with their misclassification counts."""

    group_bounds: tuple[int, ...]  # 11 ascending cut indices into the sorted order
    per_group: tuple[tuple[int, int], ...]  # (sample_count, misclassified_count)


@dataclass(frozen=True)
class OutlierReport:
    overall_rate: float
    outlier_rate: float | None  # None when no sample fell below tau
    outlier_count: int
    outlier_misclassified_count: int


@dataclass(frozen=True)
class ExtremesReport:
    class_id: int
    lowest: tuple[int, ...]  # sample ids, ascending by score
    highest: tuple[int, ...]  # sample ids, descending by score
    truncated: bool  # class population was smaller than the requested m


def ratio(rate_rare: float, rate_common: float) -> float:
    """Rare/common misclassification ratio; > 1 means rarity hurts."""
    if rate_common == 0:
        raise UndefinedRatioError("rate(common) is zero, ratio undefined")
    return rate_rare / rate_common


def score_dataset(
    model: FeedforwardModel,
    matrix: CumulativeActivationMatrix,
    dataset: LabeledDataset,
) -> list[ScoredSample]:
    """Score every sample: forward, binarize the penultimate activations,
    score against the predicted class column."""
    penult, probs = forward_batch(model, dataset.features())
    predictions = np.argmax(probs, axis=1)
    patterns = binarize_batch(penult)
    values = score_batch(patterns, matrix, predictions)
    return [
        ScoredSample(
            sample_id=int(dataset.sample_ids[i]),
            predicted_class=int(predictions[i]),
            score=float(values[i]),
            true_label=int(dataset.class_labels[i]),
            subclass=int(dataset.subclass_tags[i]),
        )
        for i in range(len(dataset))
    ]


def _require_labels(scored: Sequence[ScoredSample]) -> None:
    if any(s.true_label is None for s in scored):
        raise ValueError("analysis needs true labels on every scored sample")


def _score_order(scored: Sequence[ScoredSample]) -> list[ScoredSample]:
    # ties broken by ascending sample id so orderings are deterministic
    return sorted(scored, key=lambda s: (s.score, s.sample_id))


def decile_analysis(scored: Sequence[ScoredSample]) -> DecileReport:
    """Split score-ordered samples into ten contiguous groups.

    When N is not divisible by 10 the earliest (lowest-score) groups take
    one extra sample each. Misclassified means predicted != true.
    """
    if len(scored) < 10:
        raise ValueError(f"decile analysis needs at least 10 samples, got {len(scored)}")
    _require_labels(scored)
    ordered = _score_order(scored)
    n = len(ordered)
    q, r = divmod(n, 10)
    sizes = [q + 1] * r + [q] * (10 - r)
    bounds = [0]
    per_group = []
    for size in sizes:
        start = bounds[-1]
        group = ordered[start:start + size]
        per_group.append(
            (size, sum(1 for s in group if s.predicted_class != s.true_label))
        )
        bounds.append(start + size)
    return DecileReport(group_bounds=tuple(bounds), per_group=tuple(per_group))


def outlier_misclassification(
    scored: Sequence[ScoredSample], tau: float
) -> OutlierReport:
    """Misclassification rate over everything vs the strict-below-tau subset."""
    if not scored:
        raise ValueError("need at least one scored sample")
    _require_labels(scored)
    wrong_total = sum(1 for s in scored if s.predicted_class != s.true_label)
    outliers = [s for s in scored if s.score < tau]
    wrong_outliers = sum(1 for s in outliers if s.predicted_class != s.true_label)
    return OutlierReport(
        overall_rate=wrong_total / len(scored),
        outlier_rate=(wrong_outliers / len(outliers)) if outliers else None,
        outlier_count=len(outliers),
        outlier_misclassified_count=wrong_outliers,
    )


def extremes_report(
    scored: Sequence[ScoredSample], class_id: int, m: int = 25
) -> ExtremesReport:
    """The m lowest- and highest-scoring sample ids predicted as class_id.

    Both lists come from one ascending (score, sample_id) ordering: lowest
    is its head, highest its reversed tail, so they are disjoint whenever
    2m <= class population. Smaller populations truncate both lists and set
    the truncated flag.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    members = [s for s in scored if s.predicted_class == class_id]
    if not members:
        raise ValueError(f"no samples predicted as class {class_id}")
    ordered = _score_order(members)
    take = min(m, len(ordered))
    return ExtremesReport(
        class_id=class_id,
        lowest=tuple(s.sample_id for s in ordered[:take]),
        highest=tuple(s.sample_id for s in reversed(ordered[-take:])),
        truncated=len(ordered) < m,
    )


def rarity_experiment(
    train_ds: LabeledDataset,
    test_ds: LabeledDataset,
    cfg: TrainConfig,
    seed: int,
    trials_per_digit: int = 30,
    drop_probability: float = 0.8,
    digits: Sequence[int] = tuple(range(10)),
    arch=None,
    progress: Callable[[str], None] | None = None,
) -> tuple[list[RarityTrialResult], list[RarityDigitSummary]]:
    """The rare-digit study: for each digit and trial, rarify that digit in
    the training set, train a fresh model, and measure per-digit
    misclassification on the untouched test set.

    Every trial's rarefaction, init and shuffle seeds derive from
    (seed, digit, trial), so trials are independent yet exactly
    reproducible.
    """
    if trials_per_digit < 1:
        raise ValueError("trials_per_digit must be >= 1")
    if arch is None:
        arch = default_arch(
            input_dim=train_ds.images[0].size, classes=train_ds.k
        )
    trials: list[RarityTrialResult] = []
    for digit in digits:
        for trial in range(trials_per_digit):
            spec = RarefactionSpec(
                target_digit=digit,
                drop_probability=drop_probability,
                seed=derive_seed(seed, digit, trial, 0),
            )
            rare_train = rarify(train_ds, spec)
            model = init_model(arch, derive_seed(seed, digit, trial, 1))
            trial_cfg = replace(cfg, seed=derive_seed(seed, digit, trial, 2))
            trained, _ = train(model, rare_train, trial_cfg)
            result = evaluate(trained, test_ds)
            rates = {
                tag: wrong / total for tag, (total, wrong) in result.per_subclass.items()
            }
            trials.append(
                RarityTrialResult(
                    digit=digit,
                    trial=trial,
                    rate_rare=rates[digit],
                    rate_common_per_digit={
                        d: r for d, r in sorted(rates.items()) if d != digit
                    },
                )
            )
            if progress is not None:
                progress(
                    f"digit {digit} trial {trial}: rare rate {rates[digit]:.4f}"
                )
    return trials, summarize_rarity(trials, digits)


def summarize_rarity(
    trials: Sequence[RarityTrialResult], digits: Sequence[int]
) -> list[RarityDigitSummary]:
    """Per-digit mean rare rate, mean common rate (pooled over all trials
    where the digit was not the rarefied one) and their ratio."""
    summaries = []
    for digit in digits:
        rare = [t.rate_rare for t in trials if t.digit == digit]
        common = [
            t.rate_common_per_digit[digit]
            for t in trials
            if t.digit != digit and digit in t.rate_common_per_digit
        ]
        if not rare or not common:
            raise ValueError(
                f"digit {digit} needs trials both as rare and as common to summarize"
            )
        mean_rare = sum(rare) / len(rare)
        mean_common = sum(common) / len(common)
        summaries.append(
            RarityDigitSummary(
                digit=digit,
                mean_rate_rare=mean_rare,
                mean_rate_common=mean_common,
                ratio=ratio(mean_rare, mean_common),
            )
        )
    return summaries


def _fmt(value: float) -> str:
    """Shortest decimal that round-trips the float exactly."""
    return repr(float(value))


def write_scores_csv(scored: Sequence[ScoredSample], path) -> None:
    """Score table, rows ascending by sample id."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "true_label", "predicted_label", "subclass", "score"])
        for s in sorted(scored, key=lambda s: s.sample_id):
            writer.writerow(
                [
                    s.sample_id,
                    "" if s.true_label is None else s.true_label,
                    s.predicted_class,
                    "" if s.subclass is None else s.subclass,
                    _fmt(s.score),
                ]
            )


def read_scores_csv(path) -> list[ScoredSample]:
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        out = []
        for row in reader:
            out.append(
                ScoredSample(
                    sample_id=int(row["sample_id"]),
                    predicted_class=int(row["predicted_label"]),
                    score=float(row["score"]),
                    true_label=int(row["true_label"]) if row["true_label"] else None,
                    subclass=int(row["subclass"]) if row["subclass"] else None,
                )
            )
    return out


def write_trials_csv(trials: Sequence[RarityTrialResult], digits, path) -> None:
    digits = list(digits)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            ["digit", "trial", "rarefied_digit_rate"] + [f"rate_digit_{d}" for d in digits]
        )
        for t in trials:
            rates = [
                _fmt(t.rate_rare if d == t.digit else t.rate_common_per_digit[d])
                for d in digits
            ]
            writer.writerow([t.digit, t.trial, _fmt(t.rate_rare)] + rates)


def write_ratio_summary_csv(summaries: Sequence[RarityDigitSummary], path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["digit", "mean_rate_rare", "mean_rate_common", "ratio"])
        for s in summaries:
            writer.writerow(
                [s.digit, _fmt(s.mean_rate_rare), _fmt(s.mean_rate_common), _fmt(s.ratio)]
            )


def write_decile_csv(report: DecileReport, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["group", "count", "misclassified", "rate"])
        for group, (count, wrong) in enumerate(report.per_group):
            writer.writerow([group, count, wrong, _fmt(wrong / count if count else 0.0)])


def write_outlier_csv(report: OutlierReport, tau: float, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(
            [
                "tau",
                "overall_rate",
                "outlier_count",
                "outlier_misclassified_count",
                "outlier_rate",
            ]
        )
        writer.writerow(
            [
                _fmt(tau),
                _fmt(report.overall_rate),
                report.outlier_count,
                report.outlier_misclassified_count,
                "" if report.outlier_rate is None else _fmt(report.outlier_rate),
            ]
        )
