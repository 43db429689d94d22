"""Feedforward classifier: init, forward, training, evaluation, gradient
checking and the binary model format."""

import numpy as np
import pytest

from rarescore.activation import binarize
from rarescore.data import parity_dataset
from rarescore.errors import FormatError
from rarescore.net import (
    FeedforwardModel,
    LayerSpec,
    TrainConfig,
    TrainingDivergedError,
    _loss_and_grads,
    default_arch,
    evaluate,
    forward,
    gradient_check,
    init_model,
    load_model,
    predict,
    save_model,
    train,
    train_arrays,
)
from rarescore.rng import SplitMix64


def small_arch(m=5, hidden=7, k=3):
    return default_arch(m, hidden, k)


def random_input(m, seed):
    rng = SplitMix64(seed)
    return np.array([rng.next_float() * 2 - 1 for _ in range(m)])


class TestInitModel:
    def test_same_seed_is_bitwise_identical(self):
        a = init_model(small_arch(), seed=5)
        b = init_model(small_arch(), seed=5)
        for wa, wb in zip(a.weights, b.weights):
            assert wa.tobytes() == wb.tobytes()
        for ba, bb in zip(a.biases, b.biases):
            assert ba.tobytes() == bb.tobytes()

    def test_default_parity_shape(self):
        model = init_model(default_arch(), seed=0)
        assert model.input_dim == 784
        assert model.penultimate_width == 100
        assert model.class_count == 2

    def test_chain_mismatch_rejected(self):
        specs = [LayerSpec(784, 100, "relu"), LayerSpec(50, 2, "softmax")]
        with pytest.raises(ValueError, match="chain"):
            init_model(specs, seed=0)

    def test_softmax_only_on_final_layer(self):
        with pytest.raises(ValueError, match="softmax"):
            init_model([LayerSpec(4, 3, "softmax"), LayerSpec(3, 2, "softmax")], seed=0)

    def test_init_scale(self):
        model = init_model(small_arch(m=100), seed=1)
        scale = 1 / np.sqrt(100)
        assert np.abs(model.weights[0]).max() <= scale
        assert (model.biases[0] == 0).all()


class TestForward:
    def test_probabilities_sum_to_one(self):
        model = init_model(small_arch(), seed=2)
        for seed in range(10):
            result = forward(model, random_input(5, seed))
            assert result.probabilities.sum() == pytest.approx(1.0, abs=1e-9)
            assert ((result.probabilities > 0) & (result.probabilities < 1)).all()

    def test_zero_model_is_uniform(self):
        specs = small_arch(m=4, hidden=3, k=2)
        model = FeedforwardModel(
            specs,
            [np.zeros((s.output_width, s.input_width)) for s in specs],
            [np.zeros(s.output_width) for s in specs],
        )
        result = forward(model, [1.0, 2.0, 3.0, 4.0])
        assert result.probabilities.tolist() == [0.5, 0.5]

    def test_penultimate_non_negative_and_binarizable(self):
        model = init_model(small_arch(), seed=3)
        result = forward(model, random_input(5, 1))
        assert (result.penultimate_raw >= 0).all()
        assert binarize(result.penultimate_raw).shape == (model.penultimate_width,)

    def test_length_mismatch_rejected(self):
        model = init_model(small_arch(), seed=0)
        with pytest.raises(ValueError, match="length"):
            forward(model, [1.0, 2.0])

    def test_non_finite_input_rejected(self):
        model = init_model(small_arch(), seed=0)
        with pytest.raises(ValueError, match="finite"):
            forward(model, [1.0, np.nan, 0.0, 0.0, 0.0])


class TestPredict:
    def test_argmax(self):
        model = init_model(small_arch(k=2), seed=4)
        result = forward(model, random_input(5, 9))
        assert predict(model, random_input(5, 9)) == int(np.argmax(result.probabilities))

    def test_exact_tie_breaks_low(self):
        specs = small_arch(m=2, hidden=2, k=2)
        model = FeedforwardModel(
            specs,
            [np.zeros((s.output_width, s.input_width)) for s in specs],
            [np.zeros(s.output_width) for s in specs],
        )
        assert predict(model, [0.3, 0.7]) == 0

    def test_argmax_matches_logit_argmax(self):
        # softmax is strictly monotone, so class order survives it
        model = init_model(small_arch(k=3), seed=6)
        x = random_input(5, 2)
        hidden = np.maximum(model.weights[0] @ x + model.biases[0], 0.0)
        logits = model.weights[1] @ hidden + model.biases[1]
        assert predict(model, x) == int(np.argmax(logits))


class TestTrain:
    def toy_separable(self):
        X = np.array(
            [[1.0, 0.1], [0.9, 0.0], [0.8, 0.2], [0.7, 0.0], [1.0, 0.3],
             [0.1, 1.0], [0.0, 0.9], [0.2, 0.8], [0.0, 0.7], [0.3, 1.0]]
        )
        y = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
        return X, y

    def test_separable_toy_set_reaches_perfect_accuracy(self):
        X, y = self.toy_separable()
        model = init_model(small_arch(m=2, hidden=8, k=2), seed=0)
        trained, history = train_arrays(
            model, X, y, TrainConfig(epochs=200, batch_size=5, learning_rate=0.5, seed=0)
        )
        assert history[-1].accuracy == 1.0

    def test_determinism_bitwise(self):
        X, y = self.toy_separable()
        cfg = TrainConfig(epochs=20, batch_size=4, learning_rate=0.2, seed=3)
        model = init_model(small_arch(m=2, hidden=4, k=2), seed=1)
        a, _ = train_arrays(model, X, y, cfg)
        b, _ = train_arrays(model, X, y, cfg)
        for wa, wb in zip(a.weights, b.weights):
            assert wa.tobytes() == wb.tobytes()

    def test_epoch0_loss_near_ln2_on_balanced_binary(self):
        # near-zero init + tiny steps: first-epoch mean loss sits at the
        # uniform predictor's cross-entropy, ln 2
        rng = SplitMix64(8)
        X = np.array([rng.next_float() for _ in range(200 * 20)]).reshape(200, 20)
        y = np.array([i % 2 for i in range(200)])
        model = init_model(small_arch(m=20, hidden=400, k=2), seed=2)
        _, history = train_arrays(
            model, X, y, TrainConfig(epochs=1, batch_size=20, learning_rate=1e-6, seed=0)
        )
        assert history[0].loss == pytest.approx(np.log(2), abs=0.05)

    def test_dataset_surface_matches_array_surface(self):
        rng = np.random.default_rng(0)
        images = rng.integers(0, 256, size=(30, 28, 28), dtype=np.uint8)
        digits = rng.integers(0, 10, size=30)
        ds = parity_dataset(images, digits)
        model = init_model(default_arch(hidden=6), seed=0)
        cfg = TrainConfig(epochs=2, batch_size=10, learning_rate=0.05, seed=5)
        via_dataset, _ = train(model, ds, cfg)
        via_arrays, _ = train_arrays(model, ds.features(), ds.class_labels, cfg)
        for wa, wb in zip(via_dataset.weights, via_arrays.weights):
            assert wa.tobytes() == wb.tobytes()

    def test_empty_dataset_rejected(self):
        model = init_model(small_arch(m=2, hidden=2, k=2), seed=0)
        with pytest.raises(ValueError, match="empty"):
            train_arrays(model, np.empty((0, 2)), np.empty(0, dtype=int), TrainConfig())

    def test_batch_size_larger_than_dataset_rejected(self):
        X, y = self.toy_separable()
        model = init_model(small_arch(m=2, hidden=2, k=2), seed=0)
        with pytest.raises(ValueError, match="batch_size"):
            train_arrays(model, X, y, TrainConfig(batch_size=11))

    def test_divergence_names_epoch(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, 4))  # mixed signs keep ReLU units alive while weights explode
        y = rng.integers(0, 2, 20)
        model = init_model(small_arch(m=4, hidden=16, k=2), seed=0)
        with pytest.raises(TrainingDivergedError, match="epoch"):
            train_arrays(
                model, X, y, TrainConfig(epochs=400, batch_size=20, learning_rate=1e6, seed=0)
            )

    def test_small_step_does_not_increase_single_sample_loss(self):
        for seed in range(20):
            model = init_model(small_arch(m=4, hidden=5, k=3), seed=seed)
            x = random_input(4, seed)[np.newaxis]
            y = np.array([seed % 3])
            before = _loss_and_grads(model, x, y)[0]
            stepped, _ = train_arrays(
                model, x, y, TrainConfig(epochs=1, batch_size=1, learning_rate=1e-4, seed=0)
            )
            after = _loss_and_grads(stepped, x, y)[0]
            assert after <= before + 1e-12


class TestEvaluate:
    def test_always_right_labels(self):
        rng = np.random.default_rng(1)
        images = rng.integers(0, 256, size=(40, 28, 28), dtype=np.uint8)
        model = init_model(default_arch(hidden=5), seed=3)
        from rarescore.net import predict_batch

        ds = parity_dataset(images, rng.integers(0, 10, size=40))
        predicted = predict_batch(model, ds.features())
        relabeled = parity_dataset(images, rng.integers(0, 10, size=40))
        relabeled.class_labels = predicted.astype(np.int64)
        result = evaluate(model, relabeled)
        assert result.accuracy == 1.0
        assert result.misclassification_rate == 0.0

    def test_random_model_on_balanced_labels_near_half(self):
        # predictions are independent of the random balanced labels, so
        # accuracy is Binomial(10000, 0.5)/10000: within [0.4, 0.6] with
        # overwhelming probability
        rng = np.random.default_rng(7)
        count = 10_000
        images = rng.integers(0, 256, size=(count, 28, 28), dtype=np.uint8)
        digits = np.tile(np.arange(10), count // 10)
        rng.shuffle(digits)
        ds = parity_dataset(images, digits)
        model = init_model(default_arch(hidden=16), seed=9)
        result = evaluate(model, ds)
        assert 0.40 <= result.accuracy <= 0.60

    def test_per_subclass_counts_sum_to_totals(self):
        rng = np.random.default_rng(2)
        images = rng.integers(0, 256, size=(60, 28, 28), dtype=np.uint8)
        ds = parity_dataset(images, rng.integers(0, 10, size=60))
        model = init_model(default_arch(hidden=4), seed=1)
        result = evaluate(model, ds)
        totals = sum(t for t, _ in result.per_subclass.values())
        wrong = sum(w for _, w in result.per_subclass.values())
        assert totals == 60
        assert wrong == round(result.misclassification_rate * 60)

    def test_empty_rejected(self):
        model = init_model(default_arch(hidden=4), seed=1)
        empty = parity_dataset(np.zeros((0, 28, 28), dtype=np.uint8), np.zeros(0, dtype=int))
        with pytest.raises(ValueError, match="empty"):
            evaluate(model, empty)


class TestGradientCheck:
    def test_random_small_models_below_tolerance(self):
        worst = 0.0
        for seed in range(10):
            model = init_model(small_arch(m=6, hidden=9, k=3), seed=seed)
            x = random_input(6, seed + 50)
            worst = max(worst, gradient_check(model, (x, seed % 3), seed=seed))
        assert worst < 1e-6

    def test_zero_model_output_bias_grads_match_numeric(self):
        specs = small_arch(m=3, hidden=4, k=2)
        model = FeedforwardModel(
            specs,
            [np.zeros((s.output_width, s.input_width)) for s in specs],
            [np.zeros(s.output_width) for s in specs],
        )
        # uniform predictor: analytic output-bias gradient is (p - y) = (-0.5, 0.5)
        err = gradient_check(model, (np.array([0.1, 0.2, 0.3]), 0))
        assert err < 1e-9

    def test_sign_flip_corruption_detected(self):
        model = init_model(small_arch(m=6, hidden=9, k=3), seed=1)
        x = random_input(6, 3)
        X, y = x[np.newaxis], np.array([1])
        _, grads_w, grads_b, _ = _loss_and_grads(model, X, y)
        grads_w[0] = -grads_w[0]  # corrupted backprop
        worst = 0.0
        scratch = model.copy()
        eps = 1e-5
        for idx in range(grads_w[0].size):
            original = scratch.weights[0].flat[idx]
            scratch.weights[0].flat[idx] = original + eps
            up = _loss_and_grads(scratch, X, y)[0]
            scratch.weights[0].flat[idx] = original - eps
            down = _loss_and_grads(scratch, X, y)[0]
            scratch.weights[0].flat[idx] = original
            numeric = (up - down) / (2 * eps)
            analytic = grads_w[0].flat[idx]
            worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8))
        assert worst > 0.1


class TestModelFile:
    def test_round_trip_bitwise(self, tmp_path):
        model = init_model(small_arch(), seed=12)
        path = tmp_path / "model.bin"
        save_model(model, path)
        again = load_model(path)
        assert again.specs == model.specs
        for wa, wb in zip(again.weights, model.weights):
            assert wa.tobytes() == wb.tobytes()
        first = path.read_bytes()
        save_model(again, path)
        assert path.read_bytes() == first

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 20)
        with pytest.raises(FormatError, match="magic"):
            load_model(path)

    def test_truncation_rejected(self, tmp_path):
        model = init_model(small_arch(), seed=12)
        path = tmp_path / "model.bin"
        save_model(model, path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError, match="truncated"):
            load_model(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        model = init_model(small_arch(), seed=12)
        path = tmp_path / "model.bin"
        save_model(model, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            load_model(path)
