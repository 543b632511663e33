"""
Unit-тесты для модуля channel_stats.
"""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from app.errors import (
    ChannelIndexError, DomainError, EmptyInputError, GeometryError, InsufficientDataError, ShapeError,
    UndefinedDistributionError,
)
from app.services.channel_stats import (
    channel_kurtosis, kurtosis_of_units, mask_expectation, pca_project, project, rank_channel_activations,
    shannon_entropy, stats_matrix,
)
from app.services.oracles import oracle_entropy, oracle_kurtosis, oracle_pca_variances, oracle_rank, oracle_stats
from app.types import Dataset, EditMask, FeatureMap, ProbabilityVector


def _single_channel(values) -> FeatureMap:
    side = int(round(math.sqrt(len(values))))
    return FeatureMap(np.asarray(values, dtype=np.float64).reshape(1, side, side))


class TestKurtosis:
    """Тесты для эксцесса каналов."""

    def test_constant_channel(self):
        assert channel_kurtosis(_single_channel([0.1] * 36))[0] == 0.0
        assert channel_kurtosis(_single_channel([0.0] * 36))[0] == 0.0

    def test_two_point_channel(self):
        values = [1.0, -1.0] * 18
        assert channel_kurtosis(_single_channel(values))[0] == -2.0

    def test_single_spike(self):
        values = [0.0] * 35 + [1.0]
        expected = oracle_kurtosis(values)
        assert channel_kurtosis(_single_channel(values))[0] == pytest.approx(expected, rel=1e-12)
        assert expected > 30

    def test_matches_oracle(self):
        rng = np.random.default_rng(0)
        units = np.vstack([
            rng.standard_normal((1000, 36)),
            rng.laplace(size=(300, 36)) * 5 + 3,
            rng.uniform(-1, 1, (300, 36)) * 1e-3,
        ])
        fast = kurtosis_of_units(units)
        for row, value in zip(units, fast):
            reference = oracle_kurtosis(row.tolist())
            assert abs(value - reference) <= 1e-12 * max(1.0, abs(reference))

    def test_large_offset_keeps_small_spread(self):
        # Значения точно представимы и после сдвига на 2⁴⁰
        units = np.array([0, 1, 2, 3, 0, 1, 5, 0, 1], dtype=np.float64) * 2.0 ** -8
        base = kurtosis_of_units(units[None, :])[0]
        shifted = kurtosis_of_units(units[None, :] + 2.0 ** 40)[0]
        assert base != 0.0
        assert base == pytest.approx(oracle_kurtosis(units.tolist()), abs=1e-12)
        assert shifted == pytest.approx(base, abs=1e-9)

    def test_constant_after_offset(self):
        units = np.full((2, 16), 0.1)
        units[1] += 1e12
        assert (kurtosis_of_units(units) == 0.0).all()

    @pytest.mark.parametrize("scale", [1e-3, 7.0, 1e3])
    def test_affine_invariance(self, scale):
        rng = np.random.default_rng(1)
        units = rng.standard_normal((200, 36))
        base = kurtosis_of_units(units)
        assert np.allclose(kurtosis_of_units(units * scale + 5.0), base, rtol=0, atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=9, max_size=9))
    def test_lower_bound(self, values):
        """Эксцесс любой выборки не меньше −2."""
        units = np.asarray(values, dtype=np.float64)[None, :]
        assert (kurtosis_of_units(units) >= -2.0 - 1e-12).all()


class TestStatsMatrix:
    """Тесты для функции stats_matrix."""

    def test_empty(self):
        with pytest.raises(EmptyInputError):
            stats_matrix(Dataset.empty(2, 3, 2))

    def test_matches_oracle(self, make_dataset):
        d = make_dataset(3, channels=6, spatial=4, per_class=4)
        fast = stats_matrix(d).values
        assert fast.shape == (12, 6)
        assert np.allclose(fast, np.asarray(oracle_stats(d)), rtol=1e-12, atol=1e-12)

    def test_identical_samples_identical_rows(self, make_dataset):
        d = make_dataset(4, per_class=3)
        same = d.with_features(np.repeat(d.features[:1], len(d), axis=0))
        values = stats_matrix(same).values
        assert (values == values[0]).all()


class TestRanking:
    """Тесты для функции rank_channel_activations."""

    def _dataset(self, features) -> Dataset:
        n = features.shape[0]
        return Dataset(1, features.shape[1], features.shape[2], features, np.zeros(n), [(0, 0, 1, 1)] * n,
                       np.arange(n), np.zeros(n))

    def test_single_sample(self):
        d = self._dataset(np.ones((1, 2, 3, 3)))
        assert rank_channel_activations(d, 0) == [0]

    def test_central_maximum_decides(self):
        features = np.zeros((2, 1, 4, 4))
        features[0, 0, 1, 2] = 1.0
        features[1, 0, 2, 1] = 9.0
        # Угол вне центрального окна не учитывается
        features[0, 0, 0, 0] = 100.0
        assert rank_channel_activations(self._dataset(features), 0) == [1, 0]

    def test_ties_by_index(self):
        d = self._dataset(np.zeros((3, 1, 2, 2)))
        assert rank_channel_activations(d, 0) == [0, 1, 2]

    def test_matches_oracle(self, make_dataset):
        d = make_dataset(5, channels=4, spatial=6, per_class=17)
        for channel in range(4):
            assert rank_channel_activations(d, channel, k=9) == oracle_rank(d, channel, k=9)

    def test_channel_out_of_range(self, make_dataset):
        with pytest.raises(ChannelIndexError) as info:
            rank_channel_activations(make_dataset(0), 8)
        assert isinstance(info.value, IndexError)

    def test_spatial_too_small(self):
        with pytest.raises(GeometryError):
            rank_channel_activations(self._dataset(np.ones((2, 1, 1, 1))), 0)


class TestEntropy:
    """Тесты для энтропии и ожидания маски."""

    def test_uniform(self):
        p = ProbabilityVector(np.full(256, 1 / 256))
        assert shannon_entropy(p) == pytest.approx(math.log(256), abs=1e-12)

    def test_one_hot(self):
        entries = np.zeros(8)
        entries[3] = 1.0
        assert shannon_entropy(ProbabilityVector(entries)) == 0.0

    def test_undefined(self):
        with pytest.raises(UndefinedDistributionError):
            shannon_entropy(ProbabilityVector(np.zeros(4), defined=False))

    def test_not_normalized(self):
        with pytest.raises(DomainError):
            shannon_entropy(ProbabilityVector(np.array([0.5, 0.6])))

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(0.0, 10.0, allow_nan=False, allow_subnormal=False), min_size=1, max_size=40).filter(lambda v: sum(v) > 0))
    def test_bounds_and_oracle(self, raw):
        entries = np.asarray(raw) / math.fsum(raw)
        entries = entries / math.fsum(entries)
        assume(abs(math.fsum(entries) - 1.0) <= 1e-12)
        h = shannon_entropy(ProbabilityVector(entries))
        assert -1e-12 <= h <= math.log(len(raw)) + 1e-12
        assert h == pytest.approx(oracle_entropy(entries.tolist()), abs=1e-12)

    def test_mask_expectation(self):
        p = ProbabilityVector(np.array([0.5, 0.25, 0.25]))
        keep_all = EditMask(0, np.ones(3, dtype=np.uint8))
        drop_all = EditMask(0, np.zeros(3, dtype=np.uint8), frozenset({0, 1, 2}))
        partial = EditMask(0, np.array([0, 1, 1], dtype=np.uint8), frozenset({0}))
        assert mask_expectation(p, keep_all) == pytest.approx(1.0, abs=1e-12)
        assert mask_expectation(p, drop_all) == 0.0
        assert mask_expectation(p, partial) == 0.5
        with pytest.raises(ShapeError):
            mask_expectation(p, EditMask(0, np.ones(4, dtype=np.uint8)))


class TestPca:
    """Тесты для функции pca_project."""

    def test_axis_aligned(self):
        points = np.array([[2.0, 1.0], [2.0, -1.0], [-2.0, 1.0], [-2.0, -1.0]])
        result = pca_project(points)
        assert result.variances == pytest.approx([4.0, 1.0], rel=1e-10)
        assert abs(result.basis[0, 0]) == pytest.approx(1.0, abs=1e-5)
        assert abs(result.basis[1, 1]) == pytest.approx(1.0, abs=1e-5)

    def test_collinear(self):
        t = np.arange(10, dtype=np.float64)[:, None]
        points = t * np.array([1.0, 2.0, 3.0])
        result = pca_project(points)
        total = float(np.var(t) * 14.0)
        assert result.variances[0] == pytest.approx(total, rel=1e-10)
        assert result.variances[1] <= 1e-10 * result.variances[0]

    def test_matches_eigvalsh(self):
        for seed in range(50):
            rng = np.random.default_rng(seed)
            x = rng.standard_normal((20, 10)) * rng.uniform(0.5, 3.0, 10)
            result = pca_project(x)
            assert np.allclose(result.variances, oracle_pca_variances(x), rtol=1e-8, atol=0)
            gram = result.basis @ result.basis.T
            assert np.allclose(gram, np.eye(2), atol=1e-10)

    def test_projection_of_training_vectors(self):
        x = np.random.default_rng(9).standard_normal((15, 4))
        result = pca_project(x)
        assert np.allclose(project(result, x), result.projections, atol=1e-12)
        assert np.allclose(result.projections.mean(axis=0), 0.0, atol=1e-12)

    def test_too_few_samples(self):
        with pytest.raises(InsufficientDataError):
            pca_project(np.ones((1, 3)))
