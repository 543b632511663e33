"""
Unit-тесты для модуля linear_models.
"""

import numpy as np
import pytest

from app.config import SvmConfig
from app.errors import (
    DegenerateLabelsError, DomainError, EmptyInputError, FormatError, GeometryError, IoError, ShapeError,
    TruncationError,
)
from app.services.linear_models import (
    apply_transform, apply_transforms, best_bias, box_targets, classify, decode_model, decode_regressor,
    encode_model, encode_regressor, fit_linear_svm, predict_detections, predict_targets, read_model_bank,
    regression_pairs, regressor_objective, score, score_batch, svm_objective, train_regressor, train_svm,
    write_model_bank,
)
from app.services.oracles import oracle_ridge, oracle_svm, oracle_svm_objective
from app.types import BoxRegressor, Dataset, GroundTruthRecord, LinearModel


def _overlapping_problem(seed: int, n: int = 40):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = np.where(x[:, 0] + 0.5 * x[:, 1] + 0.6 * rng.standard_normal(n) > 0, 1, -1)
    return x, y


class TestSvmObjective:
    """Тесты для функции svm_objective."""

    def test_zero_model(self):
        model = LinearModel(np.zeros(3), 0.0, 0)
        x = np.random.default_rng(0).standard_normal((10, 3))
        y = np.array([1, -1] * 5)
        assert svm_objective(model, x, y, reg_lambda=0.5) == 1.0

    def test_hand_example(self):
        model = LinearModel(np.array([1.0, 0.0]), 0.0, 0)
        x = np.array([[2.0, 0.0], [0.5, 0.0]])
        # ½·1·1 + (0 + 0.5)/2
        assert svm_objective(model, x, [1, 1], reg_lambda=1.0) == 0.75

    def test_matches_oracle(self):
        x, y = _overlapping_problem(1)
        model = LinearModel(np.array([0.7, -0.2]), 0.1, 0)
        weights = np.where(y > 0, 2.0, 1.0)
        fast = svm_objective(model, x, y, 0.01, weights)
        slow = oracle_svm_objective(model.weights.tolist(), model.bias, x.tolist(), y.tolist(), 0.01,
                                    weights.tolist())
        assert fast == pytest.approx(slow, rel=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            svm_objective(LinearModel(np.zeros(2), 0.0, 0), np.zeros((0, 2)), [], 0.1)


class TestScore:
    """Тесты для функции score."""

    def test_zero_model(self):
        assert score(LinearModel(np.zeros(4), 0.0, 0), np.arange(4.0)) == 0.0

    def test_unit_vector(self):
        model = LinearModel(np.array([3.0, 1.0, 2.0]), 0.0, 0)
        assert score(model, np.array([1.0, 0.0, 0.0])) == 3.0

    def test_affine_in_input(self):
        rng = np.random.default_rng(2)
        model = LinearModel(rng.standard_normal(6), 0.4, 0)
        for _ in range(20):
            x, z = rng.standard_normal(6), rng.standard_normal(6)
            alpha, beta = rng.uniform(-3, 3, 2)
            combined = score(model, alpha * x + beta * z)
            expected = alpha * score(model, x) + beta * score(model, z) - (alpha + beta - 1) * model.bias
            assert combined == pytest.approx(expected, abs=1e-9)

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            score(LinearModel(np.zeros(3), 0.0, 0), np.zeros(4))


class TestBestBias:
    """Тесты для точного подбора смещения."""

    def test_minimizes_hinge(self):
        rng = np.random.default_rng(3)
        s = rng.standard_normal(30)
        y = np.where(rng.random(30) > 0.4, 1.0, -1.0)
        c = rng.uniform(0.5, 2.0, 30)
        b = best_bias(s, y, c)

        def loss(v):
            return float(np.dot(c, np.maximum(0.0, 1.0 - y * (s + v))))

        assert all(loss(b) <= loss(candidate) + 1e-12 for candidate in y - s)


class TestFitSvm:
    """Тесты для обучения SVM."""

    def test_separable_pair(self):
        model = fit_linear_svm(np.array([[1.0, 0.0], [-1.0, 0.0]]), [1, -1], SvmConfig(reg_lambda=1e-6))
        assert score(model, np.array([1.0, 0.0])) > 0
        assert score(model, np.array([-1.0, 0.0])) < 0
        assert model.weights == pytest.approx([1.0, 0.0], abs=1e-9)

    def test_matches_oracle(self):
        x, y = _overlapping_problem(4)
        cfg = SvmConfig(reg_lambda=0.01)
        model = fit_linear_svm(x, y, cfg)
        _, _, reference = oracle_svm(x, y, 0.01)
        value = svm_objective(model, x, y, 0.01)
        assert abs(value - reference) <= 1e-3 * reference

    def test_weighted_positives_match_oracle(self):
        x, y = _overlapping_problem(5)
        cfg = SvmConfig(reg_lambda=0.01, positive_weight=3.0)
        model = fit_linear_svm(x, y, cfg)
        weights = np.where(y > 0, 3.0, 1.0)
        _, _, reference = oracle_svm(x, y, 0.01, weights=weights)
        assert abs(svm_objective(model, x, y, 0.01, weights) - reference) <= 1e-3 * reference

    def test_improves_on_zero_model(self):
        x, y = _overlapping_problem(6, n=60)
        model = fit_linear_svm(x, y, SvmConfig(reg_lambda=0.05))
        assert svm_objective(model, x, y, 0.05) < 1.0

    def test_bit_identical_reruns(self):
        x, y = _overlapping_problem(7)
        cfg = SvmConfig(reg_lambda=0.01, seed=13)
        a = fit_linear_svm(x, y, cfg)
        b = fit_linear_svm(x, y, cfg)
        assert np.array_equal(a.weights, b.weights)
        assert a.bias == b.bias

    def test_duplicated_samples(self):
        """Дублирование всех выборок не меняет задачу (потери усредняются)."""
        x, y = _overlapping_problem(8, n=30)
        cfg = SvmConfig(reg_lambda=0.01, epochs=200)
        single = fit_linear_svm(x, y, cfg)
        double = fit_linear_svm(np.vstack([x, x]), np.concatenate([y, y]), cfg)
        a = svm_objective(single, x, y, 0.01)
        b = svm_objective(double, x, y, 0.01)
        assert a == pytest.approx(b, rel=1e-4)

    def test_single_class_labels(self):
        with pytest.raises(DegenerateLabelsError):
            fit_linear_svm(np.ones((3, 2)), [1, 1, 1], SvmConfig())

    def test_bad_labels(self):
        with pytest.raises(DomainError):
            fit_linear_svm(np.ones((2, 2)), [1, 0], SvmConfig())

    def test_train_on_dataset(self, make_dataset):
        d = make_dataset(9, channels=2, spatial=2, per_class=8)
        shifted = d.features.copy()
        for c in range(3):
            shifted[d.class_ids == c, c % 2] += 4.0 * (1 if c < 2 else -1)
        d = d.with_features(shifted)
        models = [train_svm(d, c, SvmConfig(reg_lambda=1e-3)) for c in range(3)]
        assert all(m.dimension == 8 for m in models)
        predicted = classify(models, d.flattened())
        assert (predicted == d.class_ids).mean() >= 0.8


class TestClassify:
    """Тесты для функции classify."""

    def test_tie_goes_to_smaller_class(self):
        models = [LinearModel(np.ones(2), 0.0, 1), LinearModel(np.ones(2), 0.0, 0)]
        assert list(classify(models, np.array([[1.0, 2.0]]))) == [0]

    def test_argmax(self):
        models = [LinearModel(np.array([1.0, 0.0]), 0.0, 0), LinearModel(np.array([0.0, 1.0]), 0.0, 1)]
        assert list(classify(models, np.array([[2.0, 1.0], [0.0, 3.0]]))) == [0, 1]


class TestBoxTransforms:
    """Тесты для целей регрессии рамок."""

    def test_identity(self):
        assert box_targets((0, 0, 10, 10), (0, 0, 10, 10)) == (0.0, 0.0, 0.0, 0.0)

    def test_shift(self):
        assert box_targets((0, 0, 10, 10), (5, 0, 15, 10)) == (0.5, 0.0, 0.0, 0.0)

    def test_degenerate_proposal(self):
        with pytest.raises(GeometryError):
            box_targets((0, 0, 0, 10), (0, 0, 10, 10))
        with pytest.raises(GeometryError):
            apply_transforms(np.array([[0.0, 0.0, 0.0, 10.0]]), np.zeros((1, 4)))

    def test_round_trip(self):
        rng = np.random.default_rng(10)
        n = 10_000
        p1 = rng.uniform(0, 400, (n, 2))
        proposals = np.hstack([p1, p1 + rng.uniform(5, 200, (n, 2))])
        g1 = rng.uniform(0, 400, (n, 2))
        gts = np.hstack([g1, g1 + rng.uniform(5, 200, (n, 2))])
        deltas = np.array([box_targets(tuple(p), tuple(g)) for p, g in zip(proposals, gts)])
        assert np.allclose(apply_transforms(proposals, deltas), gts, rtol=1e-9, atol=1e-9)
        assert apply_transform(tuple(proposals[0]), deltas[0]) == pytest.approx(tuple(gts[0]), abs=1e-9)

    def test_regression_pairs(self):
        boxes = [(0, 0, 10, 10), (1, 0, 11, 10), (50, 50, 60, 60), (0, 0, 10, 10)]
        d = Dataset(2, 1, 1, np.ones((4, 1, 1, 1)), [0, 0, 0, 1], boxes, [0, 0, 1, 0], np.zeros(4))
        gts = [GroundTruthRecord(0, 0, (0, 0, 10, 10)), GroundTruthRecord(1, 0, (0, 0, 10, 10))]
        indices, targets = regression_pairs(d, gts, class_id=0, min_iou=0.6)
        assert list(indices) == [0, 1]
        assert targets[0] == pytest.approx([0, 0, 0, 0])
        assert targets[1] == pytest.approx([-0.1, 0, 0, 0])


class TestRegressor:
    """Тесты для гребневого регрессора рамок."""

    def test_zero_targets(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((20, 6))
        reg = train_regressor(x, np.zeros((20, 4)), ridge_lambda=1e-4)
        assert np.linalg.norm(reg.weights) <= 1e-6
        boxes = rng.uniform(10, 20, (20, 2))
        boxes = np.hstack([boxes, boxes + 5])
        assert np.allclose(apply_transforms(boxes, predict_targets(reg, x)), boxes, atol=1e-9)

    def test_planted_linear_map(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((50, 5))
        weights = rng.standard_normal((4, 5))
        biases = rng.standard_normal(4)
        reg = train_regressor(x, x @ weights.T + biases, ridge_lambda=1e-8)
        assert np.abs(reg.weights - weights).max() <= 1e-6
        assert np.abs(reg.biases - biases).max() <= 1e-6

    @pytest.mark.parametrize("dim", [5, 40])
    def test_matches_oracle(self, dim):
        rng = np.random.default_rng(13 + dim)
        x = rng.standard_normal((30, dim))
        t = rng.standard_normal((30, 4))
        reg = train_regressor(x, t, ridge_lambda=0.1)
        weights, biases = oracle_ridge(x, t, 0.1)
        reference = BoxRegressor(weights=weights, biases=biases, ridge_lambda=0.1)
        assert abs(regressor_objective(reg, x, t) - regressor_objective(reference, x, t)) <= 1e-8
        assert np.allclose(reg.weights, weights, atol=1e-8)

    def test_norm_shrinks_with_lambda(self):
        rng = np.random.default_rng(14)
        x = rng.standard_normal((25, 8))
        t = rng.standard_normal((25, 4))
        norms = [np.linalg.norm(train_regressor(x, t, lam).weights) for lam in (1e-4, 1e-2, 1.0)]
        assert norms[0] >= norms[1] - 1e-12
        assert norms[1] >= norms[2] - 1e-12

    def test_invalid_inputs(self):
        with pytest.raises(ShapeError):
            train_regressor(np.ones((3, 2)), np.ones((3, 3)), 0.1)
        with pytest.raises(DomainError):
            train_regressor(np.ones((3, 2)), np.ones((3, 4)), 0.0)


class TestModelFiles:
    """Тесты для файлов моделей."""

    def test_model_round_trip(self):
        model = LinearModel(np.array([1.5, -2.0, 1e-300]), -0.25, 4)
        back = decode_model(encode_model(model))
        assert np.array_equal(back.weights, model.weights)
        assert (back.bias, back.class_id) == (-0.25, 4)

    def test_regressor_round_trip(self):
        rng = np.random.default_rng(15)
        reg = BoxRegressor(rng.standard_normal((4, 7)), rng.standard_normal(4), 0.01, class_id=2)
        back = decode_regressor(encode_regressor(reg))
        assert np.array_equal(back.weights, reg.weights)
        assert np.array_equal(back.biases, reg.biases)
        assert (back.ridge_lambda, back.class_id) == (0.01, 2)

    def test_bad_magic_and_truncation(self):
        payload = encode_model(LinearModel(np.ones(3), 0.0, 0))
        with pytest.raises(FormatError):
            decode_model(b'XMOD1' + payload[5:])
        with pytest.raises(TruncationError):
            decode_model(payload[:-1])
        with pytest.raises(FormatError):
            decode_model(payload + b'\x00')

    def test_bank(self, tmp_path):
        models = [LinearModel(np.full(3, float(c)), float(c), c) for c in (1, 0)]
        regs = {0: BoxRegressor(np.zeros((4, 3)), np.zeros(4), 0.1, class_id=0)}
        written = write_model_bank(tmp_path / 'models', models, regs)
        assert len(written) == 3
        loaded, loaded_regs = read_model_bank(tmp_path / 'models')
        assert [m.class_id for m in loaded] == [0, 1]
        assert list(loaded_regs) == [0]

    def test_empty_bank(self, tmp_path):
        with pytest.raises(IoError):
            read_model_bank(tmp_path)


class TestPredictDetections:
    """Тесты для функции predict_detections."""

    def test_one_record_per_sample_and_class(self, make_dataset):
        d = make_dataset(16, channels=2, spatial=2, per_class=4)
        models = [LinearModel(np.full(8, 0.1 * c), 0.0, c) for c in range(3)]
        records = predict_detections(d, models)
        assert len(records) == len(d) * 3
        first = records[0]
        assert first.class_id == 0 and first.image_id == int(d.image_ids[0])
        assert first.box == pytest.approx(tuple(float(v) for v in d.boxes[0]))
        assert [r.score for r in records[len(d):2 * len(d)]] == pytest.approx(
            list(score_batch(models[1], d.flattened())))
