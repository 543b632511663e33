"""
Модели данных конвейера редактирования признаков pool5.
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterator, List, Literal, Optional, Sequence, Tuple, TypedDict

import numpy as np

from .errors import (
    ChannelIndexError, ClassIdError, DomainError, GeometryError, InputContractError, NonFiniteValueError,
    ShapeError,
)

Box = Tuple[float, float, float, float]

Variant = Literal['original', 'edited_only', 'merged', 'random_edit']
NegativeEdit = Literal['classifier-class', 'own-class', 'none']
ApMode = Literal['eleven_point', 'continuous']
DropReason = Literal['kept', 'intra', 'inter', 'both']
StageStatus = Literal['done', 'skipped']


def check_box(box: Sequence[float], what: str = "рамка") -> Box:
    """Проверяет рамку (x1, y1, x2, y2): конечные координаты, x1 < x2, y1 < y2."""
    if len(box) != 4:
        raise ShapeError(f"{what}: ожидается 4 координаты, получено {len(box)}")
    x1, y1, x2, y2 = (float(v) for v in box)
    if not all(np.isfinite((x1, y1, x2, y2))):
        raise GeometryError(f"{what}: неконечные координаты {box}")
    if not (x1 < x2 and y1 < y2):
        raise GeometryError(f"{what}: вырожденная рамка {box}")
    return x1, y1, x2, y2


@dataclass(frozen=True)
class FeatureMap:
    """Карта активаций одного региона: C×S×S, порядок (канал, строка, столбец)."""
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[1] != values.shape[2] or min(values.shape) < 1:
            raise ShapeError(f"карта признаков должна иметь форму C×S×S, получено {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError("карта признаков содержит NaN/Inf")
        object.__setattr__(self, 'values', values)

    @property
    def channels(self) -> int:
        return int(self.values.shape[0])

    @property
    def spatial(self) -> int:
        return int(self.values.shape[1])

    def __eq__(self, other) -> bool:
        return isinstance(other, FeatureMap) and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class LabeledSample:
    """Размеченный регион: карта признаков + класс + рамка + изображение."""
    feature: FeatureMap
    class_id: int
    box: Box
    image_id: int
    difficult: bool = False


@dataclass(eq=False)
class Dataset:
    """
    Набор размеченных регионов в виде «структуры массивов».

    features: (N, C, S, S) float32; class_ids, image_ids: (N,); boxes: (N, 4) float32; difficult: (N,) bool.
    Порядок выборок стабилен: индекс i всегда указывает на одну и ту же выборку.
    """
    num_classes: int
    channels: int
    spatial: int
    features: np.ndarray
    class_ids: np.ndarray
    boxes: np.ndarray
    image_ids: np.ndarray
    difficult: np.ndarray

    def __post_init__(self):
        if self.num_classes < 1 or self.channels < 1 or self.spatial < 1:
            raise ShapeError(
                f"некорректная геометрия набора: T={self.num_classes}, C={self.channels}, S={self.spatial}"
            )
        # Значения хранятся в f32, как в файле FEAT1; переполнение даёт Inf и ловится ниже
        with np.errstate(over='ignore'):
            features = np.asarray(self.features, dtype=np.float32)
        n = features.shape[0] if features.ndim == 4 else -1
        expected = (n, self.channels, self.spatial, self.spatial)
        if features.ndim != 4 or features.shape != expected:
            raise ShapeError(f"массив признаков должен иметь форму {expected}, получено {features.shape}")
        self.features = features
        try:
            self.class_ids = np.asarray(self.class_ids, dtype=np.int64).reshape(n)
            self.image_ids = np.asarray(self.image_ids, dtype=np.int64).reshape(n)
            self.difficult = np.asarray(self.difficult, dtype=bool).reshape(n)
            self.boxes = np.asarray(self.boxes, dtype=np.float32).reshape(n, 4)
        except ValueError as e:
            raise ShapeError(f"метки набора не согласованы с числом выборок {n}: {e}") from e

        if n and (self.class_ids.min() < 0 or self.class_ids.max() >= self.num_classes):
            raise ClassIdError(f"class_id вне [0, {self.num_classes})")
        if n and self.image_ids.min() < 0:
            raise DomainError("image_id должен быть неотрицательным")
        finite = np.isfinite(features.reshape(n, self.dimension)).all(axis=1)
        if not finite.all():
            bad = int(np.flatnonzero(~finite)[0])
            raise NonFiniteValueError(f"выборка {bad}: карта признаков содержит NaN/Inf", sample_index=bad)
        if not np.isfinite(self.boxes).all():
            raise GeometryError("рамки содержат NaN/Inf")
        bad_boxes = (self.boxes[:, 0] >= self.boxes[:, 2]) | (self.boxes[:, 1] >= self.boxes[:, 3])
        if bad_boxes.any():
            raise GeometryError(f"выборка {int(np.flatnonzero(bad_boxes)[0])}: вырожденная рамка")

    # --- конструкторы --------------------------------------------------------

    @classmethod
    def empty(cls, num_classes: int, channels: int, spatial: int) -> "Dataset":
        """Пустой набор заданной геометрии."""
        return cls(
            num_classes=num_classes, channels=channels, spatial=spatial,
            features=np.zeros((0, channels, spatial, spatial), dtype=np.float32),
            class_ids=np.zeros(0, dtype=np.int64), boxes=np.zeros((0, 4), dtype=np.float32),
            image_ids=np.zeros(0, dtype=np.int64), difficult=np.zeros(0, dtype=bool),
        )

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledSample], num_classes: int,
                     channels: Optional[int] = None, spatial: Optional[int] = None) -> "Dataset":
        """Собирает набор из списка выборок (все с одинаковой геометрией)."""
        if not samples:
            if channels is None or spatial is None:
                raise ShapeError("для пустого набора нужно явно указать C и S")
            return cls.empty(num_classes, channels, spatial)
        shapes = {s.feature.values.shape for s in samples}
        if len(shapes) != 1:
            raise ShapeError(f"выборки имеют разную геометрию: {sorted(shapes)}")
        c, s, _ = shapes.pop()
        return cls(
            num_classes=num_classes, channels=c, spatial=s,
            features=np.stack([smp.feature.values for smp in samples]),
            class_ids=[smp.class_id for smp in samples],
            boxes=[smp.box for smp in samples],
            image_ids=[smp.image_id for smp in samples],
            difficult=[smp.difficult for smp in samples],
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        """Копия набора с заменёнными признаками; метки и рамки не меняются."""
        return Dataset(
            num_classes=self.num_classes, channels=self.channels, spatial=self.spatial,
            features=features, class_ids=self.class_ids.copy(), boxes=self.boxes.copy(),
            image_ids=self.image_ids.copy(), difficult=self.difficult.copy(),
        )

    def subset(self, indices: Sequence[int]) -> "Dataset":
        """Поднабор в порядке переданных индексов."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            num_classes=self.num_classes, channels=self.channels, spatial=self.spatial,
            features=self.features[idx], class_ids=self.class_ids[idx], boxes=self.boxes[idx],
            image_ids=self.image_ids[idx], difficult=self.difficult[idx],
        )

    # --- доступ --------------------------------------------------------------

    def __len__(self) -> int:
        return int(self.features.shape[0])

    def __getitem__(self, index: int) -> LabeledSample:
        if not -len(self) <= index < len(self):
            raise IndexError(f"индекс выборки {index} вне [0, {len(self)})")
        return LabeledSample(
            feature=FeatureMap(self.features[index]),
            class_id=int(self.class_ids[index]),
            box=tuple(float(v) for v in self.boxes[index]),  # type: ignore[arg-type]
            image_id=int(self.image_ids[index]),
            difficult=bool(self.difficult[index]),
        )

    def __iter__(self) -> Iterator[LabeledSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def geometry(self) -> Tuple[int, int, int]:
        """(C, S, T)."""
        return self.channels, self.spatial, self.num_classes

    @property
    def dimension(self) -> int:
        """Длина развёрнутого вектора признаков D = C·S·S."""
        return self.channels * self.spatial * self.spatial

    def class_counts(self) -> np.ndarray:
        """N_C для каждого класса в [0, T)."""
        return np.bincount(self.class_ids, minlength=self.num_classes)

    def flattened(self) -> np.ndarray:
        """Признаки (N, D) в float64, развёртка по каналам (channel-major)."""
        return self.features.reshape(len(self), self.dimension).astype(np.float64)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.geometry == other.geometry
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.class_ids, other.class_ids)
            and np.array_equal(self.boxes, other.boxes)
            and np.array_equal(self.image_ids, other.image_ids)
            and np.array_equal(self.difficult, other.difficult)
        )


@dataclass(frozen=True)
class DetectionRecord:
    """Оценённая детекция."""
    image_id: int
    class_id: int
    score: float
    box: Box

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise DomainError(f"score детекции должен быть конечным: {self.score}")
        object.__setattr__(self, 'box', check_box(self.box, "рамка детекции"))


@dataclass(frozen=True)
class GroundTruthRecord:
    """Эталонный объект изображения."""
    image_id: int
    class_id: int
    box: Box
    difficult: bool = False

    def __post_init__(self):
        object.__setattr__(self, 'box', check_box(self.box, "эталонная рамка"))


@dataclass
class ChannelStatsMatrix:
    """Матрица эксцессов K_ji: строки — выборки, столбцы — каналы."""
    values: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return int(self.values.shape[0]), int(self.values.shape[1])


@dataclass
class ProbabilityVector:
    """Распределение по каналам; defined=False, если исходные дисперсии все нулевые."""
    entries: np.ndarray
    defined: bool = True

    @property
    def undefined(self) -> bool:
        return not self.defined

    def __len__(self) -> int:
        return int(self.entries.shape[0])


@dataclass
class VarianceProfile:
    """Внутри- и межклассовые дисперсии статистики каналов."""
    intra: np.ndarray        # (T, C): V_i^C
    class_means: np.ndarray  # (T, C): средний эксцесс класса
    grand_mean: np.ndarray   # (C,): среднее по классам без весов
    inter: np.ndarray        # (C,): V_i^A

    @property
    def num_classes(self) -> int:
        return int(self.intra.shape[0])

    @property
    def channels(self) -> int:
        return int(self.intra.shape[1])


@dataclass(frozen=True)
class EditMask:
    """Маска класса: keep_i = 0 для каналов из dropped_intra ∪ dropped_inter."""
    class_id: int
    keep: np.ndarray
    dropped_intra: FrozenSet[int] = field(default_factory=frozenset)
    dropped_inter: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        keep = np.asarray(self.keep)
        if keep.ndim != 1:
            raise ShapeError(f"маска должна быть вектором, получено {keep.shape}")
        if keep.dtype != bool:
            if not np.isin(keep, (0, 1)).all():
                raise DomainError("значения маски должны быть 0 или 1")
            keep = keep.astype(bool)
        object.__setattr__(self, 'keep', keep)
        object.__setattr__(self, 'dropped_intra', frozenset(int(i) for i in self.dropped_intra))
        object.__setattr__(self, 'dropped_inter', frozenset(int(i) for i in self.dropped_inter))

        union = self.dropped_intra | self.dropped_inter
        if union and not (min(union) >= 0 and max(union) < keep.shape[0]):
            raise ChannelIndexError(f"отброшенные каналы вне [0, {keep.shape[0]})")
        # keep_i = 0 ровно для каналов из dropped_intra ∪ dropped_inter
        zeros = frozenset(int(i) for i in np.flatnonzero(~keep))
        if zeros != union:
            raise InputContractError(
                f"класс {self.class_id}: нули маски {sorted(zeros)} не совпадают с отброшенными {sorted(union)}"
            )

    @property
    def channels(self) -> int:
        return int(self.keep.shape[0])

    @property
    def dropped(self) -> List[int]:
        return sorted(self.dropped_intra | self.dropped_inter)

    def reason(self, channel: int) -> DropReason:
        """Причина решения по каналу: kept / intra / inter / both."""
        in_intra = channel in self.dropped_intra
        in_inter = channel in self.dropped_inter
        if in_intra and in_inter:
            return 'both'
        if in_intra:
            return 'intra'
        if in_inter:
            return 'inter'
        return 'kept'

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, EditMask)
            and self.class_id == other.class_id
            and np.array_equal(self.keep, other.keep)
            and self.dropped_intra == other.dropped_intra
            and self.dropped_inter == other.dropped_inter
        )


@dataclass
class LinearModel:
    """Линейная модель класса: score = w·x + b."""
    weights: np.ndarray
    bias: float
    class_id: int

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[0])


@dataclass
class BoxRegressor:
    """Четыре линейных головы (tx, ty, tw, th) поверх развёрнутых признаков."""
    weights: np.ndarray  # (4, D)
    biases: np.ndarray   # (4,)
    ridge_lambda: float
    class_id: int = 0

    @property
    def dimension(self) -> int:
        return int(self.weights.shape[1])


@dataclass
class PcaResult:
    """Проекции на две главные компоненты."""
    projections: np.ndarray  # (N, k)
    basis: np.ndarray        # (k, D), строки ортонормированы
    variances: np.ndarray    # (k,), по убыванию
    mean: np.ndarray         # (D,)


@dataclass
class PrCurve:
    """Кривая precision/recall одного класса и её AP."""
    class_id: int
    recall: np.ndarray
    precision: np.ndarray
    ap: float
    num_tp: int
    num_fp: int
    num_gt: int
    warning: Optional[str] = None

    def points(self) -> List[Tuple[float, float]]:
        return [(float(r), float(p)) for r, p in zip(self.recall, self.precision)]


@dataclass
class EvalReport:
    """AP по классам и mAP."""
    per_class: Dict[int, PrCurve]
    mean_ap: float


class ChannelRoles(TypedDict):
    """JSON-файл с ролями каналов синтетического набора."""
    num_classes: int
    channels: int
    friendly: Dict[str, List[int]]  # ключ: str(class_id)
    noisy: Dict[str, List[int]]
    flat: List[int]
    seed: int
    shift: float


class ClassSummary(TypedDict, total=False):
    """Строка отчёта по классу."""
    class_id: int
    ap: float
    num_gt: int
    num_tp: int
    num_fp: int
    dropped_intra: int
    dropped_inter: int
    dropped_total: int
    entropy_intra: Optional[float]
    entropy_inter: Optional[float]
    retained_mass_intra: Optional[float]
    retained_mass_inter: Optional[float]
