"""Minimal dense feedforward classifier with penultimate-activation capture.

ReLU hidden layers, softmax output, mean cross-entropy loss, plain
mini-batch gradient descent. Everything is float64 and fully deterministic
given the seed: identical (dataset, config) pairs produce bitwise-identical
models.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .rng import SplitMix64, derive_seed

MODEL_MAGIC = b"RARNET01"
RELU, SOFTMAX = "relu", "softmax"
_NL_CODES = {RELU: 0, SOFTMAX: 1}
_NL_NAMES = {v: k for k, v in _NL_CODES.items()}


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass(frozen=True)
class LayerSpec:
    input_width: int
    output_width: int
    nonlinearity: str

    def __post_init__(self):
        if self.input_width < 1 or self.output_width < 1:
            raise ValueError("layer widths must be >= 1")
        if self.nonlinearity not in _NL_CODES:
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")


@dataclass(frozen=True)
class TrainConfig:
    # defaults calibrated on MNIST parity: high enough learning rate that the
    # penultimate layer goes sparse and low scores start tracking errors
    epochs: int = 15
    batch_size: int = 64
    learning_rate: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


@dataclass(frozen=True)
class ForwardResult:
    penultimate_raw: np.ndarray  # (n,) post-ReLU output of the last hidden layer
    probabilities: np.ndarray  # (k,) softmax output


@dataclass(frozen=True)
class EpochStats:
    loss: float
    accuracy: float


@dataclass
class EvalResult:
    accuracy: float
    misclassification_rate: float
    per_subclass: dict[int, tuple[int, int]]  # tag -> (total, misclassified)


def default_arch(input_dim: int = 784, hidden: int = 100, classes: int = 2) -> list[LayerSpec]:
    """Single 100-neuron ReLU layer into a softmax pair, unless overridden."""
    return [
        LayerSpec(input_dim, hidden, RELU),
        LayerSpec(hidden, classes, SOFTMAX),
    ]


class FeedforwardModel:
    """Dense layers with an immutable spec list; weights are (out, in)."""

    def __init__(self, specs, weights, biases):
        specs = tuple(specs)
        if len(specs) < 2:
            raise ValueError("need at least one hidden layer before the softmax output")
        for i, spec in enumerate(specs):
            is_last = i == len(specs) - 1
            if (spec.nonlinearity == SOFTMAX) != is_last:
                raise ValueError("softmax is required on the final layer and only there")
            if i and spec.input_width != specs[i - 1].output_width:
                raise ValueError(
                    f"layer {i} input width {spec.input_width} does not chain from "
                    f"{specs[i - 1].output_width}"
                )
        if len(weights) != len(specs) or len(biases) != len(specs):
            raise ValueError("one weight matrix and bias vector per layer")
        for spec, w, b in zip(specs, weights, biases):
            if w.shape != (spec.output_width, spec.input_width) or b.shape != (spec.output_width,):
                raise ValueError("parameter shapes do not match the layer specs")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ValueError("model parameters must be finite")
        self.specs = specs
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]

    @property
    def input_dim(self) -> int:
        return self.specs[0].input_width

    @property
    def class_count(self) -> int:
        return self.specs[-1].output_width

    @property
    def penultimate_width(self) -> int:
        return self.specs[-2].output_width

    def copy(self) -> "FeedforwardModel":
        return FeedforwardModel(
            self.specs, [w.copy() for w in self.weights], [b.copy() for b in self.biases]
        )


def init_model(specs, seed: int) -> FeedforwardModel:
    """Seeded init: weights uniform in +-1/sqrt(input_width), biases zero.

    Draw order is fixed (layer by layer, weights row-major), so identical
    seeds give bitwise-identical models.
    """
    rng = SplitMix64(seed)
    weights, biases = [], []
    for spec in specs:
        scale = 1.0 / np.sqrt(spec.input_width)
        u = rng.float_array(spec.output_width * spec.input_width)
        weights.append(((2.0 * u - 1.0) * scale).reshape(spec.output_width, spec.input_width))
        biases.append(np.zeros(spec.output_width))
    return FeedforwardModel(specs, weights, biases)


def _softmax_rows(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(log-probabilities, probabilities), max-shifted for stability."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    with np.errstate(over="ignore", invalid="ignore"):
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        logp = shifted - lse
        return logp, np.exp(logp)


def _forward_cached(model: FeedforwardModel, X: np.ndarray):
    """Forward a (B, m) batch keeping post-ReLU activations for backprop.

    Overflow is not an error here: a diverging run surfaces as a non-finite
    epoch loss, which training reports as TrainingDivergedError.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        acts = [X]
        a = X
        for w, b in zip(model.weights[:-1], model.biases[:-1]):
            a = np.maximum(a @ w.T + b, 0.0)
            acts.append(a)
        logits = a @ model.weights[-1].T + model.biases[-1]
        logp, probs = _softmax_rows(logits)
    return acts, logp, probs


def forward_batch(model: FeedforwardModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(penultimate_raw, probabilities) for a (B, m) input block."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.input_dim:
        raise ValueError(f"inputs must be (batch, {model.input_dim})")
    acts, _, probs = _forward_cached(model, X)
    return acts[-1], probs


def forward(model: FeedforwardModel, x) -> ForwardResult:
    """Forward one input vector of length m."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise ValueError(f"input must have length {model.input_dim}, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("input contains non-finite values")
    penult, probs = forward_batch(model, x[np.newaxis])
    return ForwardResult(penultimate_raw=penult[0], probabilities=probs[0])


def predict(model: FeedforwardModel, x) -> int:
    """Most likely class; exact ties resolve to the lowest class index."""
    return int(np.argmax(forward(model, x).probabilities))


def predict_batch(model: FeedforwardModel, X: np.ndarray) -> np.ndarray:
    _, probs = forward_batch(model, X)
    return np.argmax(probs, axis=1)


def _loss_and_grads(model: FeedforwardModel, X: np.ndarray, y: np.ndarray):
    """Mean cross-entropy, per-parameter gradients, and batch probabilities."""
    batch = X.shape[0]
    acts, logp, probs = _forward_cached(model, X)
    loss = -logp[np.arange(batch), y].mean()
    dZ = probs.copy()
    dZ[np.arange(batch), y] -= 1.0
    dZ /= batch
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for layer in range(len(model.weights) - 1, -1, -1):
        grads_w[layer] = dZ.T @ acts[layer]
        grads_b[layer] = dZ.sum(axis=0)
        if layer:
            dA = dZ @ model.weights[layer]
            dZ = dA * (acts[layer] > 0.0)
    return loss, grads_w, grads_b, probs


def train_arrays(
    model: FeedforwardModel, X: np.ndarray, y: np.ndarray, cfg: TrainConfig
) -> tuple[FeedforwardModel, list[EpochStats]]:
    """Mini-batch gradient descent on (inputs, labels) arrays.

    Batches come from a fresh seeded shuffle each epoch. The input model is
    left untouched; the trained copy and per-epoch (loss, accuracy) history
    are returned.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training needs a non-empty (samples, features) block")
    if y.shape != (X.shape[0],):
        raise ValueError("labels must align with inputs")
    if y.min() < 0 or y.max() >= model.class_count:
        raise ValueError(f"labels must lie in 0..{model.class_count - 1}")
    if not np.isfinite(X).all():
        raise ValueError("training inputs contain non-finite values")
    if cfg.batch_size > X.shape[0]:
        raise ValueError(f"batch_size {cfg.batch_size} exceeds dataset size {X.shape[0]}")

    model = model.copy()
    rng = SplitMix64(derive_seed(cfg.seed, 0xBA7C4))
    samples = X.shape[0]
    history: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(samples)
        loss_sum = 0.0
        correct = 0
        for start in range(0, samples, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            Xb, yb = X[idx], y[idx]
            loss, grads_w, grads_b, probs = _loss_and_grads(model, Xb, yb)
            loss_sum += loss * len(idx)
            correct += int((np.argmax(probs, axis=1) == yb).sum())
            with np.errstate(over="ignore", invalid="ignore"):
                for layer in range(len(model.weights)):
                    model.weights[layer] -= cfg.learning_rate * grads_w[layer]
                    model.biases[layer] -= cfg.learning_rate * grads_b[layer]
        epoch_loss = loss_sum / samples
        if not np.isfinite(epoch_loss):
            raise TrainingDivergedError(f"non-finite loss at epoch {epoch}")
        history.append(EpochStats(loss=float(epoch_loss), accuracy=correct / samples))
    return model, history


def train(model: FeedforwardModel, dataset, cfg: TrainConfig):
    """Train on a LabeledDataset (pixels scaled to [0, 1])."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    return train_arrays(model, dataset.features(), dataset.class_labels, cfg)


def evaluate(model: FeedforwardModel, dataset) -> EvalResult:
    """Accuracy, misclassification rate and per-subclass error counts."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    predictions = predict_batch(model, dataset.features())
    wrong = predictions != dataset.class_labels
    accuracy = 1.0 - wrong.mean()
    per_subclass: dict[int, tuple[int, int]] = {}
    for tag in np.unique(dataset.subclass_tags):
        members = dataset.subclass_tags == tag
        per_subclass[int(tag)] = (int(members.sum()), int(wrong[members].sum()))
    return EvalResult(
        accuracy=float(accuracy),
        misclassification_rate=float(wrong.mean()),
        per_subclass=per_subclass,
    )


def _param_slots(model: FeedforwardModel) -> list[tuple[int, str, int]]:
    slots = []
    for layer, (w, b) in enumerate(zip(model.weights, model.biases)):
        slots.extend((layer, "w", i) for i in range(w.size))
        slots.extend((layer, "b", i) for i in range(b.size))
    return slots


def gradient_check(
    model: FeedforwardModel,
    sample: tuple[np.ndarray, int],
    epsilon: float = 1e-5,
    max_params: int = 200,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter, or a seeded random subset of max_params when the
    model is larger. Relative error uses max(|analytic|, |numeric|, 1e-8) as
    the denominator.
    """
    x, label = sample
    X = np.asarray(x, dtype=np.float64)[np.newaxis]
    y = np.asarray([label], dtype=np.int64)
    _, grads_w, grads_b, _ = _loss_and_grads(model, X, y)

    slots = _param_slots(model)
    if len(slots) > max_params:
        keep = SplitMix64(seed).permutation(len(slots))[:max_params]
        slots = [slots[i] for i in keep]

    scratch = model.copy()
    worst = 0.0
    for layer, kind, flat in slots:
        params = scratch.weights[layer] if kind == "w" else scratch.biases[layer]
        grad = grads_w[layer] if kind == "w" else grads_b[layer]
        original = params.flat[flat]
        params.flat[flat] = original + epsilon
        up = _loss_and_grads(scratch, X, y)[0]
        params.flat[flat] = original - epsilon
        down = _loss_and_grads(scratch, X, y)[0]
        params.flat[flat] = original
        numeric = (up - down) / (2.0 * epsilon)
        analytic = grad.flat[flat]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def save_model(model: FeedforwardModel, path) -> None:
    """Binary model file; round-trips bitwise."""
    parts = [MODEL_MAGIC, struct.pack("<I", len(model.specs))]
    for spec, w, b in zip(model.specs, model.weights, model.biases):
        parts.append(
            struct.pack(
                "<IIB", spec.input_width, spec.output_width, _NL_CODES[spec.nonlinearity]
            )
        )
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_model(path) -> FeedforwardModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {data[:8]!r}, expected {MODEL_MAGIC!r}")
    offset = 8

    def take(count: int, what: str) -> bytes:
        nonlocal offset
        if len(data) < offset + count:
            raise FormatError(f"{path}: truncated reading {what}")
        chunk = data[offset:offset + count]
        offset += count
        return chunk

    (layer_count,) = struct.unpack("<I", take(4, "layer count"))
    specs, weights, biases = [], [], []
    for layer in range(layer_count):
        in_w, out_w, code = struct.unpack("<IIB", take(9, f"layer {layer} header"))
        if code not in _NL_NAMES:
            raise FormatError(f"{path}: unknown nonlinearity code {code}")
        specs.append(LayerSpec(in_w, out_w, _NL_NAMES[code]))
        w = np.frombuffer(take(8 * in_w * out_w, f"layer {layer} weights"), dtype="<f8")
        weights.append(w.reshape(out_w, in_w).copy())
        b = np.frombuffer(take(8 * out_w, f"layer {layer} biases"), dtype="<f8")
        biases.append(b.copy())
    if offset != len(data):
        raise FormatError(f"{path}: {len(data) - offset} unexpected trailing bytes")
    try:
        return FeedforwardModel(specs, weights, biases)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
