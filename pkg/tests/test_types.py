"""
Unit-тесты для моделей данных.
"""

import numpy as np
import pytest

from app.errors import (
    ChannelIndexError, ClassIdError, DataError, DomainError, GeometryError, InputContractError,
    NonFiniteValueError, ShapeError,
)
from app.types import (
    Dataset, DetectionRecord, EditMask, FeatureMap, GroundTruthRecord, LabeledSample, check_box,
)


class TestCheckBox:
    """Тесты для функции check_box."""

    def test_valid_box(self):
        assert check_box((0, 1, 2, 3)) == (0.0, 1.0, 2.0, 3.0)

    @pytest.mark.parametrize("box", [(0, 0, 0, 5), (0, 0, 5, 0), (5, 0, 1, 3), (0, 0, float('inf'), 1)])
    def test_degenerate_box(self, box):
        with pytest.raises(GeometryError):
            check_box(box)

    def test_wrong_length(self):
        with pytest.raises(ShapeError):
            check_box((0, 0, 1))


class TestFeatureMap:
    """Тесты для FeatureMap."""

    def test_shape_must_be_square(self):
        with pytest.raises(ShapeError):
            FeatureMap(np.zeros((2, 3, 4)))
        with pytest.raises(ShapeError):
            FeatureMap(np.zeros((3, 3)))

    def test_nan_rejected(self):
        values = np.zeros((1, 2, 2))
        values[0, 1, 1] = np.nan
        with pytest.raises(NonFiniteValueError) as info:
            FeatureMap(values)
        # Нарушение предусловия: одновременно ValueError и ошибка данных
        assert isinstance(info.value, ValueError)
        assert isinstance(info.value, DataError)

    def test_geometry(self):
        fmap = FeatureMap(np.ones((4, 2, 2)))
        assert (fmap.channels, fmap.spatial) == (4, 2)


class TestDataset:
    """Тесты для Dataset."""

    def test_class_id_out_of_range(self, make_dataset):
        d = make_dataset(0)
        with pytest.raises(ClassIdError):
            Dataset(2, d.channels, d.spatial, d.features, d.class_ids, d.boxes, d.image_ids, d.difficult)

    def test_degenerate_box(self, make_dataset):
        d = make_dataset(0)
        boxes = d.boxes.copy()
        boxes[3, 2] = boxes[3, 0]
        with pytest.raises(GeometryError):
            d.__class__(d.num_classes, d.channels, d.spatial, d.features, d.class_ids, boxes,
                        d.image_ids, d.difficult)

    def test_negative_image_id(self, make_dataset):
        d = make_dataset(0)
        image_ids = d.image_ids.copy()
        image_ids[0] = -1
        with pytest.raises(DomainError):
            Dataset(d.num_classes, d.channels, d.spatial, d.features, d.class_ids, d.boxes, image_ids, d.difficult)

    def test_nan_reports_sample_index(self, make_dataset):
        d = make_dataset(0)
        features = d.features.copy()
        features[7, 0, 1, 1] = np.inf
        with pytest.raises(NonFiniteValueError) as info:
            d.with_features(features)
        assert info.value.sample_index == 7

    def test_wrong_feature_shape(self, make_dataset):
        d = make_dataset(0)
        with pytest.raises(ShapeError):
            d.with_features(d.features[:, :, :2, :])

    def test_empty_from_samples_needs_geometry(self):
        with pytest.raises(ShapeError):
            Dataset.from_samples([], num_classes=2)
        empty = Dataset.from_samples([], num_classes=2, channels=3, spatial=2)
        assert len(empty) == 0
        assert empty.geometry == (3, 2, 2)

    def test_from_samples_round_trip(self, make_dataset):
        d = make_dataset(1)
        rebuilt = Dataset.from_samples(list(d), num_classes=d.num_classes)
        assert rebuilt == d

    def test_getitem(self, make_dataset):
        d = make_dataset(2)
        sample = d[11]
        assert isinstance(sample, LabeledSample)
        assert sample.class_id == 1
        assert np.array_equal(sample.feature.values, d.features[11])
        with pytest.raises(IndexError):
            d[len(d)]

    def test_subset_keeps_order(self, make_dataset):
        d = make_dataset(3)
        sub = d.subset([5, 0, 29])
        assert list(sub.image_ids) == [5, 0, 29]
        assert np.array_equal(sub.features[2], d.features[29])

    def test_counts_and_dimension(self, make_dataset):
        d = make_dataset(4, num_classes=4, channels=5, spatial=3, per_class=6)
        assert list(d.class_counts()) == [6, 6, 6, 6]
        assert d.dimension == 45
        assert d.flattened().shape == (24, 45)
        assert d.flattened().dtype == np.float64

    def test_flattened_is_channel_major(self):
        features = np.arange(8, dtype=np.float32).reshape(1, 2, 2, 2)
        d = Dataset(1, 2, 2, features, [0], [(0, 0, 1, 1)], [0], [False])
        assert list(d.flattened()[0]) == [0, 1, 2, 3, 4, 5, 6, 7]


class TestRecords:
    """Тесты для DetectionRecord и GroundTruthRecord."""

    def test_detection_score_must_be_finite(self):
        with pytest.raises(DomainError):
            DetectionRecord(0, 0, float('nan'), (0, 0, 1, 1))

    def test_detection_box_normalized(self):
        det = DetectionRecord(0, 1, 0.5, [0, 0, 2, 2])
        assert det.box == (0.0, 0.0, 2.0, 2.0)

    def test_ground_truth_degenerate(self):
        with pytest.raises(GeometryError):
            GroundTruthRecord(0, 0, (3, 3, 3, 4))


class TestEditMask:
    """Тесты для EditMask."""

    def test_reasons(self):
        keep = np.array([0, 0, 0, 1], dtype=np.uint8)
        mask = EditMask(0, keep, frozenset({0, 1}), frozenset({1, 2}))
        assert [mask.reason(i) for i in range(4)] == ['intra', 'both', 'inter', 'kept']
        assert mask.dropped == [0, 1, 2]
        assert mask.channels == 4

    def test_integer_keep_is_coerced(self):
        mask = EditMask(0, np.array([1, 1, 1, 0]), frozenset({3}))
        assert mask.keep.dtype == bool
        assert list(mask.keep) == [True, True, True, False]

    def test_keep_values_must_be_binary(self):
        with pytest.raises(DomainError):
            EditMask(0, np.array([1, 2, 1, 0]), frozenset({3}))

    def test_zeros_must_match_dropped(self):
        with pytest.raises(InputContractError):
            EditMask(0, np.array([1, 1, 1, 0], dtype=bool))
        with pytest.raises(InputContractError):
            EditMask(0, np.ones(4, dtype=bool), frozenset({1}))

    def test_dropped_channel_out_of_range(self):
        with pytest.raises(ChannelIndexError):
            EditMask(0, np.zeros(2, dtype=bool), frozenset({0, 1, 2}))

    def test_keep_must_be_vector(self):
        with pytest.raises(ShapeError):
            EditMask(0, np.ones((2, 2), dtype=bool))
