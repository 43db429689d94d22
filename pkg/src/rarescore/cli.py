"""Command-line surface for the full pipeline.

Subcommands: train, matrix, score, outliers, deciles, extremes, rarify,
oversample, monitor build, monitor assess, rarity-experiment. Every
invocation writes a JSON manifest alongside its outputs recording the
command, flags, seed, paths and wall-clock interval, so any run can be
reproduced exactly. All randomness flows from --seed; nothing reads
entropy from the environment.

Exit codes: 0 success, 1 internal/propagated error, 2 usage/input error.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .activation import (
    binarize_batch,
    build_matrix_arrays,
    load_matrix,
    save_matrix,
    tukey_threshold,
)
from .data import (
    LabeledDataset,
    RarefactionSpec,
    load_parity_split,
    oversample,
    rarify,
    write_idx,
    TEST_IMAGES,
    TEST_LABELS,
    TRAIN_IMAGES,
    TRAIN_LABELS,
)
from .experiments import (
    decile_analysis,
    extremes_report,
    outlier_misclassification,
    rarity_experiment,
    read_scores_csv,
    score_dataset,
    write_decile_csv,
    write_outlier_csv,
    write_ratio_summary_csv,
    write_scores_csv,
    write_trials_csv,
)
from .monitor import (
    assess,
    build_monitor,
    fingerprint_file,
    load_monitor,
    save_monitor,
)
from .net import (
    LayerSpec,
    TrainConfig,
    evaluate,
    forward,
    forward_batch,
    init_model,
    load_model,
    save_model,
    train,
)
from .pgm import emit_montage


def _parse_arch(text: str) -> list[LayerSpec]:
    widths = [int(w) for w in text.split(",")]
    if len(widths) < 2:
        raise argparse.ArgumentTypeError("arch needs at least two widths, e.g. 784,100,2")
    specs = []
    for i in range(len(widths) - 1):
        nl = "softmax" if i == len(widths) - 2 else "relu"
        specs.append(LayerSpec(widths[i], widths[i + 1], nl))
    return specs


def _parse_digits(text: str) -> list[int]:
    digits = [int(d) for d in text.split(",")]
    for d in digits:
        if not 0 <= d <= 9:
            raise argparse.ArgumentTypeError(f"digit {d} out of range 0-9")
    return digits


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(manifest_path: Path, command: str, args, inputs, outputs, started: str) -> None:
    flags = {
        k: (str(v) if isinstance(v, Path) else v)
        for k, v in vars(args).items()
        if k not in ("func", "command") and not callable(v)
    }
    flags.pop("arch", None)
    if getattr(args, "arch", None) is not None:
        flags["arch"] = ",".join(
            [str(args.arch[0].input_width)] + [str(s.output_width) for s in args.arch]
        )
    manifest = {
        "tool": "rarescore",
        "version": __version__,
        "command": command,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(p) for p in outputs],
        "started": started,
        "finished": _utcnow(),
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        seed=args.seed,
    )


def _dataset_or_fail(data_dir: Path, split: str) -> LabeledDataset:
    if not data_dir.is_dir():
        raise FileNotFoundError(f"data directory not found: {data_dir}")
    return load_parity_split(data_dir, split)


def _write_data_dir(out_dir: Path, train_ds: LabeledDataset, data_dir: Path) -> list[Path]:
    """Write a rarefied/augmented train split plus the untouched test files,
    so the output directory is a complete drop-in data directory."""
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = [out_dir / TRAIN_IMAGES, out_dir / TRAIN_LABELS]
    write_idx(train_ds.images, outputs[0])
    write_idx(train_ds.subclass_tags.astype(np.uint8), outputs[1])
    try:
        test_ds = _dataset_or_fail(data_dir, "test")
    except FileNotFoundError:
        return outputs
    outputs += [out_dir / TEST_IMAGES, out_dir / TEST_LABELS]
    write_idx(test_ds.images, outputs[2])
    write_idx(test_ds.subclass_tags.astype(np.uint8), outputs[3])
    return outputs


def cmd_train(args):
    train_ds = _dataset_or_fail(args.data, "train")
    model = init_model(args.arch, args.seed)
    trained, history = train(model, train_ds, _train_config(args))
    save_model(trained, args.out)
    print(f"final train accuracy {history[-1].accuracy:.4f}")
    try:
        test_ds = _dataset_or_fail(args.data, "test")
    except FileNotFoundError:
        pass
    else:
        print(f"test accuracy {evaluate(trained, test_ds).accuracy:.4f}")
    return [args.data], [args.out]


def cmd_matrix(args):
    train_ds = _dataset_or_fail(args.data, "train")
    model = load_model(args.model)
    if model.input_dim != train_ds.images[0].size:
        raise ValueError(
            f"model expects {model.input_dim} inputs but images have "
            f"{train_ds.images[0].size} pixels"
        )
    penult, _ = forward_batch(model, train_ds.features())
    patterns = binarize_batch(penult)
    matrix = build_matrix_arrays(
        patterns, train_ds.class_labels, train_ds.k, train_ds.class_names
    )
    save_matrix(matrix, args.out)
    per_class = ",".join(
        f"{name}:{int(count)}"
        for name, count in zip(matrix.class_names, matrix.class_sample_counts)
    )
    print(f"n={matrix.n} k={matrix.k} class_samples={per_class}")
    return [args.data, args.model], [args.out]


def cmd_score(args):
    dataset = _dataset_or_fail(args.data, args.split)
    model = load_model(args.model)
    matrix = load_matrix(args.matrix)
    if matrix.n != model.penultimate_width:
        raise ValueError(
            f"matrix n={matrix.n} does not match model penultimate width "
            f"{model.penultimate_width}"
        )
    scored = score_dataset(model, matrix, dataset)
    write_scores_csv(scored, args.out)
    print(f"scored {len(scored)} samples from split {args.split!r}")
    return [args.data, args.model, args.matrix], [args.out]


def cmd_outliers(args):
    scored = read_scores_csv(args.scores)
    threshold = tukey_threshold([s.score for s in scored], k_fence=args.k_fence)
    report = outlier_misclassification(scored, threshold.tau)
    write_outlier_csv(report, threshold.tau, args.out)
    rate = "n/a" if report.outlier_rate is None else f"{report.outlier_rate:.4f}"
    print(
        f"tau={threshold.tau!r} outliers={report.outlier_count} "
        f"outlier_rate={rate} overall_rate={report.overall_rate:.4f}"
    )
    return [args.scores], [args.out]


def cmd_deciles(args):
    scored = read_scores_csv(args.scores)
    report = decile_analysis(scored)
    write_decile_csv(report, args.out)
    rates = " ".join(f"{wrong}/{count}" for count, wrong in report.per_group)
    print(f"deciles (misclassified/count, ascending score): {rates}")
    return [args.scores], [args.out]


def cmd_extremes(args):
    scored = read_scores_csv(args.scores)
    dataset = _dataset_or_fail(args.data, args.split)
    image_by_id = {int(i): idx for idx, i in enumerate(dataset.sample_ids)}
    args.out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    rows = []
    by_id = {s.sample_id: s for s in scored}
    classes = sorted({s.predicted_class for s in scored})
    for class_id in classes:
        report = extremes_report(scored, class_id, m=args.count)
        name = (
            dataset.class_names[class_id]
            if class_id < len(dataset.class_names)
            else str(class_id)
        )
        for kind, ids in (("lowest", report.lowest), ("highest", report.highest)):
            rows.extend(
                [class_id, kind, rank, sid, repr(by_id[sid].score)]
                for rank, sid in enumerate(ids)
            )
            montage_path = args.out_dir / f"extremes_{name}_{kind}.pgm"
            emit_montage([dataset.images[image_by_id[sid]] for sid in ids[:25]], montage_path)
            outputs.append(montage_path)
    csv_path = args.out_dir / "extremes.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["class", "kind", "rank", "sample_id", "score"])
        writer.writerows(rows)
    outputs.append(csv_path)
    print(f"wrote extremes for classes {classes} to {args.out_dir}")
    return [args.scores, args.data], outputs


def cmd_rarify(args):
    train_ds = _dataset_or_fail(args.data, "train")
    spec = RarefactionSpec(
        target_digit=args.digit, drop_probability=args.p, seed=args.seed
    )
    rare = rarify(train_ds, spec)
    kept = int((rare.subclass_tags == args.digit).sum())
    total = int((train_ds.subclass_tags == args.digit).sum())
    outputs = _write_data_dir(args.out_dir, rare, args.data)
    print(
        f"digit {args.digit}: kept {kept} of {total} samples "
        f"(p={args.p}), dataset now {len(rare)} samples"
    )
    return [args.data], outputs


def cmd_oversample(args):
    train_ds = _dataset_or_fail(args.data, "train")
    ids = [int(line) for line in args.ids.read_text().split() if line.strip()]
    if not ids:
        raise ValueError(f"no sample ids found in {args.ids}")
    augmented = oversample(train_ds, ids, args.count, args.seed)
    outputs = _write_data_dir(args.out_dir, augmented, args.data)
    print(
        f"added {args.count} copies drawn from {len(set(ids))} selected samples; "
        f"dataset now {len(augmented)} samples"
    )
    return [args.data, args.ids], outputs


def cmd_monitor_build(args):
    matrix = load_matrix(args.matrix)
    scored = read_scores_csv(args.scores)
    monitor = build_monitor(
        matrix,
        [s.score for s in scored],
        basis=args.basis,
        k_fence=args.k_fence,
        model_fingerprint=fingerprint_file(args.model),
    )
    save_monitor(monitor, args.out)
    print(f"tau={monitor.threshold.tau!r} basis={args.basis}")
    return [args.matrix, args.scores, args.model], [args.out]


def cmd_monitor_assess(args):
    monitor = load_monitor(args.monitor)
    model = load_model(args.model)
    actual_fp = fingerprint_file(args.model)
    if actual_fp != monitor.model_fingerprint:
        raise ValueError(
            f"model fingerprint {actual_fp:016x} does not match the monitor's "
            f"{monitor.model_fingerprint:016x}; the matrix was built for a different model"
        )
    dataset = _dataset_or_fail(args.data, args.split)
    if args.id is not None:
        rows = np.flatnonzero(dataset.sample_ids == args.id)
        if rows.size == 0:
            raise ValueError(f"sample id {args.id} not found in split {args.split!r}")
        x = dataset.features()[rows[0]]
        result = forward(model, x)
        pattern = (result.penultimate_raw > 0.0).astype(np.uint8)
        decision = assess(monitor, pattern, int(np.argmax(result.probabilities)))
        print(decision.verdict)
        detail = "undefined" if decision.score is None else repr(decision.score)
        print(f"score={detail} tau={decision.tau_used!r}", file=sys.stderr)
        return [args.monitor, args.model, args.data], []
    if args.out is None:
        raise ValueError("monitor assess needs --id or --out")
    penult, probs = forward_batch(model, dataset.features())
    patterns = binarize_batch(penult)
    predictions = np.argmax(probs, axis=1)
    referred = 0
    with open(args.out, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "predicted_label", "score", "verdict"])
        order = np.argsort(dataset.sample_ids, kind="stable")
        for row in order:
            decision = assess(monitor, patterns[row], int(predictions[row]))
            referred += decision.verdict == "refer"
            writer.writerow(
                [
                    int(dataset.sample_ids[row]),
                    int(predictions[row]),
                    "" if decision.score is None else repr(decision.score),
                    decision.verdict,
                ]
            )
    print(f"referred {referred} of {len(dataset)} samples (tau={monitor.threshold.tau!r})")
    return [args.monitor, args.model, args.data], [args.out]


def cmd_rarity_experiment(args):
    train_ds = _dataset_or_fail(args.data, "train")
    test_ds = _dataset_or_fail(args.data, "test")
    trials, summaries = rarity_experiment(
        train_ds,
        test_ds,
        _train_config(args),
        seed=args.seed,
        trials_per_digit=args.trials,
        drop_probability=args.p,
        digits=args.digits,
        progress=lambda message: print(message, file=sys.stderr),
    )
    args.out_dir.mkdir(parents=True, exist_ok=True)
    trials_path = args.out_dir / "trials.csv"
    summary_path = args.out_dir / "ratio_summary.csv"
    write_trials_csv(trials, args.digits, trials_path)
    write_ratio_summary_csv(summaries, summary_path)
    for s in summaries:
        print(
            f"digit {s.digit}: rare {s.mean_rate_rare:.4f} vs common "
            f"{s.mean_rate_common:.4f} -> ratio {s.ratio:.2f}"
        )
    return [args.data], [trials_path, summary_path]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rarescore",
        description="Detect and mitigate rare subclasses via commonality scoring.",
    )
    parser.add_argument("--version", action="version", version=f"rarescore {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.set_defaults(func=fn)
        return p

    p = add("train", cmd_train, help="train a parity classifier on an MNIST directory")
    p.add_argument("--data", type=Path, required=True, help="directory with the four MNIST files")
    p.add_argument("--out", type=Path, required=True, help="model file to write")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", type=_parse_arch, default=_parse_arch("784,100,2"))
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.15)

    p = add("matrix", cmd_matrix, help="build the cumulative activation matrix over the train split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("score", cmd_score, help="write the commonality-score table for a split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--matrix", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", type=Path, required=True)

    p = add("outliers", cmd_outliers, help="Tukey-fence outlier report over a score table")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--k-fence", type=float, default=1.5)
    p.add_argument("--out", type=Path, required=True)

    p = add("deciles", cmd_deciles, help="misclassification by score decile")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = add("extremes", cmd_extremes, help="lowest/highest score reports and montages per class")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--count", type=int, default=25)
    p.add_argument("--out-dir", type=Path, required=True)

    p = add("rarify", cmd_rarify, help="drop one digit's samples with a fixed probability")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--digit", type=int, required=True, choices=range(10))
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)

    p = add("oversample", cmd_oversample, help="append seeded duplicates of selected train samples")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--ids", type=Path, required=True, help="file with one sample id per line")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", type=Path, required=True)

    monitor_parser = sub.add_parser("monitor", help="build or apply a trust monitor")
    monitor_sub = monitor_parser.add_subparsers(dest="monitor_command", required=True)

    p = monitor_sub.add_parser("build", help="package a matrix with a Tukey threshold")
    p.set_defaults(func=cmd_monitor_build)
    p.add_argument("--matrix", type=Path, required=True)
    p.add_argument("--scores", type=Path, required=True, help="reference score table")
    p.add_argument("--basis", choices=("training_scores", "test_scores"), default="training_scores")
    p.add_argument("--k-fence", type=float, default=1.5)
    p.add_argument("--model", type=Path, required=True, help="model file to fingerprint")
    p.add_argument("--out", type=Path, required=True)

    p = monitor_sub.add_parser("assess", help="accept/refer verdicts for samples")
    p.set_defaults(func=cmd_monitor_assess)
    p.add_argument("--monitor", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--id", type=int, default=None, help="assess a single sample id")
    p.add_argument("--out", type=Path, default=None, help="CSV of verdicts for the whole split")

    p = add("rarity-experiment", cmd_rarity_experiment, help="the rare-digit trial study")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--trials", type=int, default=30, help="trials per digit")
    p.add_argument("--digits", type=_parse_digits, default=list(range(10)))
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--learning-rate", type=float, default=0.15)

    return parser


def _manifest_path(args, outputs) -> Path | None:
    out_dir = getattr(args, "out_dir", None)
    if out_dir is not None:
        return Path(out_dir) / "manifest.json"
    out = getattr(args, "out", None)
    if out is not None:
        return Path(str(out) + ".manifest.json")
    if outputs:
        return Path(str(outputs[0]) + ".manifest.json")
    monitor_path = getattr(args, "monitor", None)
    if monitor_path is not None:
        return Path(str(monitor_path) + ".assess.manifest.json")
    return None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    if command == "monitor":
        command = f"monitor {args.monitor_command}"
    started = _utcnow()
    try:
        inputs, outputs = args.func(args)
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # module errors propagate as diagnostics, not tracebacks
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest_path = _manifest_path(args, outputs)
    if manifest_path is not None:
        _write_manifest(manifest_path, command, args, inputs, outputs, started)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
