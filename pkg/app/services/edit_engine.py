"""
Редактирование признаков: профили дисперсий, распределения отбрасывания, маски каналов,
применение масок, случайное редактирование и слияние наборов.
"""

import math
from typing import Dict, List, Mapping, Optional, Sequence, Union

import numpy as np

from ..config import EditConfig
from ..errors import (
    ClassIdError, DegenerateClassError, DegenerateDatasetError, DomainError, MissingClassError,
    ParseError, ShapeError, UndefinedDistributionError,
)
from ..types import (
    ChannelStatsMatrix, ClassSummary, Dataset, EditMask, FeatureMap, NegativeEdit, ProbabilityVector,
    VarianceProfile,
)
from .channel_stats import mask_expectation, shannon_entropy
from .feature_store import read_csv_rows
from .logger import get_logger
from .util import PathLike, atomic_write, csv_text

logger = get_logger('edit_engine')

MASK_HEADER = ('class_id', 'channel', 'keep', 'reason')
# Запас при округлении вниз: 0.3·10 в float64 = 2.9999999999999996
FLOOR_EPS = 1e-9
ROUNDOFF_ULPS = 16.0

Masks = Union[Sequence[EditMask], Mapping[int, EditMask]]


def drop_count(frac: float, channels: int) -> int:
    """⌊frac·C⌋ с защитой от ошибки представления долей."""
    return int(math.floor(frac * channels + FLOOR_EPS))


def _flush_roundoff(variance: np.ndarray, scale: np.ndarray) -> np.ndarray:
    """Обнуляет дисперсии на уровне ошибки округления (набор одинаковых значений)."""
    eps = np.finfo(np.float64).eps
    return np.where(variance <= (ROUNDOFF_ULPS * eps * scale) ** 2, 0.0, variance)


def variance_profile(stats: ChannelStatsMatrix, labels: Sequence[int], num_classes: int) -> VarianceProfile:
    """
    Внутриклассовые и межклассовые дисперсии эксцессов.

    intra[c, i] — популяционная дисперсия столбца i по строкам класса c;
    inter[i] — среднее по T классам (без весов N_C) квадратов отклонений средних класса от общего среднего.
    """
    values = np.asarray(stats.values, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if values.ndim != 2 or labels.shape != (values.shape[0],):
        raise ShapeError(f"метки {labels.shape} не согласованы с матрицей {values.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ClassIdError(f"метка класса вне [0, {num_classes})")

    channels = values.shape[1]
    intra = np.empty((num_classes, channels))
    class_means = np.empty((num_classes, channels))
    for c in range(num_classes):
        rows = values[labels == c]
        if rows.shape[0] == 0:
            raise MissingClassError(f"для класса {c} нет ни одной выборки")
        class_means[c] = rows.mean(axis=0)
        intra[c] = _flush_roundoff(rows.var(axis=0), np.abs(rows).max(axis=0))

    grand_mean = class_means.mean(axis=0)
    inter = ((class_means - grand_mean) ** 2).mean(axis=0)
    inter = _flush_roundoff(inter, np.abs(class_means).max(axis=0))
    return VarianceProfile(intra=intra, class_means=class_means, grand_mean=grand_mean, inter=inter)


def drop_distribution(v: Sequence[float]) -> ProbabilityVector:
    """p_i = v_i / Σv; при Σv = 0 вектор помечается неопределённым."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"ожидается вектор дисперсий, получено {v.shape}")
    if not np.isfinite(v).all():
        raise DomainError("дисперсии должны быть конечными")
    if (v < 0).any():
        raise DomainError(f"отрицательная дисперсия в канале {int(np.flatnonzero(v < 0)[0])}")
    total = v.sum()
    if total == 0:
        return ProbabilityVector(np.zeros_like(v), defined=False)
    return ProbabilityVector(v / total)


def _top(p: ProbabilityVector, count: int, largest: bool) -> frozenset:
    """count индексов с наибольшими (наименьшими) p; ничьи — меньший индекс первым."""
    if p.undefined or count == 0:
        return frozenset()
    idx = np.arange(len(p))
    key = -p.entries if largest else p.entries
    order = np.lexsort((idx, key))
    return frozenset(int(i) for i in order[:count])


def build_mask(profile: VarianceProfile, class_id: int, cfg: EditConfig) -> EditMask:
    """
    Маска класса: отбрасываются ⌊intra_frac·C⌋ каналов с наибольшей p*(intra)
    и ⌊inter_frac·C⌋ каналов с наименьшей p*(inter).
    """
    if not 0 <= class_id < profile.num_classes:
        raise ClassIdError(f"класс {class_id} вне [0, {profile.num_classes})")
    channels = profile.channels
    p_intra = drop_distribution(profile.intra[class_id])
    p_inter = drop_distribution(profile.inter)

    if p_intra.undefined and p_inter.undefined:
        others = [c for c in range(profile.num_classes) if c != class_id and profile.intra[c].sum() > 0]
        if others:
            raise DegenerateClassError(
                f"класс {class_id}: не определены ни intra-, ни inter-распределение"
            )
        raise DegenerateDatasetError("ни для одного класса распределения отбрасывания не определены")

    dropped_intra = _top(p_intra, drop_count(cfg.intra_frac, channels), largest=True)
    dropped_inter = _top(p_inter, drop_count(cfg.inter_frac, channels), largest=False)
    if p_intra.undefined:
        logger.warning(f"⚠️ Класс {class_id}: intra-распределение не определено, intra-отбор пуст",
                       extra={'class_id': class_id})
    if p_inter.undefined:
        logger.warning(f"⚠️ Класс {class_id}: inter-распределение не определено, inter-отбор пуст",
                       extra={'class_id': class_id})

    keep = np.ones(channels, dtype=bool)
    keep[list(dropped_intra | dropped_inter)] = False
    return EditMask(class_id=class_id, keep=keep, dropped_intra=dropped_intra, dropped_inter=dropped_inter)


def build_masks(profile: VarianceProfile, cfg: EditConfig) -> List[EditMask]:
    """Маски всех классов по порядку class_id."""
    masks = [build_mask(profile, c, cfg) for c in range(profile.num_classes)]
    for mask in masks:
        logger.info(
            f"✂️ Класс {mask.class_id}: intra {len(mask.dropped_intra)}, inter {len(mask.dropped_inter)}, "
            f"всего отброшено {len(mask.dropped)} из {mask.channels}",
            extra={'class_id': mask.class_id, 'stage': 'masks'},
        )
    return masks


def apply_mask(m: FeatureMap, mask: EditMask) -> FeatureMap:
    """Обнуляет каналы с keep=0; остальные каналы копируются без изменений."""
    if mask.channels != m.channels:
        raise ShapeError(f"длина маски {mask.channels} ≠ числу каналов {m.channels}")
    values = m.values.copy()
    values[~mask.keep] = 0
    return FeatureMap(values)


def random_drop_count(units: int, drop_ratio: float) -> int:
    """⌊k·r/(1+r)⌋: число обнуляемых позиций при отношении нулей к единицам r."""
    return int(math.floor(units * drop_ratio / (1.0 + drop_ratio) + FLOOR_EPS))


def _check_drop_ratio(drop_ratio: float) -> None:
    if not (math.isfinite(drop_ratio) and 0.0 <= drop_ratio < 1.0):
        raise DomainError(f"drop_ratio должен лежать в [0, 1), получено {drop_ratio}")


def random_edit(m: FeatureMap, drop_ratio: float, rng: np.random.Generator) -> FeatureMap:
    """Обнуляет случайные позиции (равномерно, без повторов) по случайному бинарному вектору."""
    _check_drop_ratio(drop_ratio)
    units = m.values.size
    zeros = random_drop_count(units, drop_ratio)
    values = m.values.copy()
    if zeros:
        flat = values.reshape(-1)
        flat[rng.choice(units, size=zeros, replace=False)] = 0
    return FeatureMap(values)


def random_edit_dataset(d: Dataset, drop_ratio: float, seed: int) -> Dataset:
    """Случайное редактирование набора; генератор выборки j выводится из (seed, j)."""
    _check_drop_ratio(drop_ratio)
    units = d.channels * d.spatial * d.spatial
    zeros = random_drop_count(units, drop_ratio)
    features = d.features.copy()
    if zeros:
        flat = features.reshape(len(d), units)
        for j in range(len(d)):
            rng = np.random.default_rng([seed, j])
            flat[j, rng.choice(units, size=zeros, replace=False)] = 0
    return d.with_features(features)


def _keep_matrix(masks: Masks, num_classes: int, channels: int, needed: Sequence[int]) -> np.ndarray:
    by_class: Dict[int, EditMask] = dict(masks) if isinstance(masks, Mapping) else {m.class_id: m for m in masks}
    keep = np.ones((num_classes, channels), dtype=bool)
    for c in needed:
        mask = by_class.get(int(c))
        if mask is None:
            raise MissingClassError(f"нет маски для класса {int(c)}")
        if mask.channels != channels:
            raise ShapeError(f"маска класса {int(c)}: длина {mask.channels} ≠ C={channels}")
        keep[int(c)] = mask.keep
    return keep


def edit_dataset(d: Dataset, masks: Masks) -> Dataset:
    """Каждая выборка редактируется маской своего класса; метки и порядок не меняются."""
    needed = np.unique(d.class_ids)
    keep = _keep_matrix(masks, d.num_classes, d.channels, needed)
    features = d.features.copy()
    features[~keep[d.class_ids]] = 0
    return d.with_features(features)


def edit_with_mask(d: Dataset, mask: EditMask) -> Dataset:
    """Все выборки набора редактируются одной маской."""
    if mask.channels != d.channels:
        raise ShapeError(f"длина маски {mask.channels} ≠ C={d.channels}")
    features = d.features.copy()
    features[:, ~mask.keep] = 0
    return d.with_features(features)


def edit_for_classifier(d: Dataset, masks: Masks, class_id: int, mode: NegativeEdit) -> Dataset:
    """
    Редактированный набор для классификатора class_id.

    classifier-class — маска class_id ко всем выборкам; own-class — каждой выборке своя маска;
    none — редактируются только положительные выборки.
    """
    if mode == 'classifier-class':
        keep = _keep_matrix(masks, d.num_classes, d.channels, [class_id])
        features = d.features.copy()
        features[:, ~keep[class_id]] = 0
        return d.with_features(features)
    if mode == 'own-class':
        return edit_dataset(d, masks)
    if mode == 'none':
        keep = _keep_matrix(masks, d.num_classes, d.channels, [class_id])
        features = d.features.copy()
        positives = d.class_ids == class_id
        block = features[positives]
        block[:, ~keep[class_id]] = 0
        features[positives] = block
        return d.with_features(features)
    raise DomainError(f"неизвестный режим редактирования негативов: {mode!r}")


def merge_datasets(a: Dataset, b: Dataset) -> Dataset:
    """Конкатенация: сначала выборки a, затем b."""
    if a.geometry != b.geometry:
        raise ShapeError(f"геометрия (C, S, T) не совпадает: {a.geometry} vs {b.geometry}")
    return Dataset(
        num_classes=a.num_classes, channels=a.channels, spatial=a.spatial,
        features=np.concatenate([a.features, b.features]),
        class_ids=np.concatenate([a.class_ids, b.class_ids]),
        boxes=np.concatenate([a.boxes, b.boxes]),
        image_ids=np.concatenate([a.image_ids, b.image_ids]),
        difficult=np.concatenate([a.difficult, b.difficult]),
    )


# --- диагностика и экспорт ------------------------------------------------------------

def _optional(fn, *args) -> Optional[float]:
    try:
        return fn(*args)
    except UndefinedDistributionError:
        return None


def describe_masks(profile: VarianceProfile, masks: Sequence[EditMask]) -> Dict[int, ClassSummary]:
    """Размеры отборов, энтропии p*(intra)/p*(inter) и сохранённая маской масса."""
    p_inter = drop_distribution(profile.inter)
    summary: Dict[int, ClassSummary] = {}
    for mask in masks:
        p_intra = drop_distribution(profile.intra[mask.class_id])
        summary[mask.class_id] = ClassSummary(
            class_id=mask.class_id,
            dropped_intra=len(mask.dropped_intra),
            dropped_inter=len(mask.dropped_inter),
            dropped_total=len(mask.dropped),
            entropy_intra=_optional(shannon_entropy, p_intra),
            entropy_inter=_optional(shannon_entropy, p_inter),
            retained_mass_intra=_optional(mask_expectation, p_intra, mask),
            retained_mass_inter=_optional(mask_expectation, p_inter, mask),
        )
    return summary


def write_masks_csv(masks: Sequence[EditMask], path: PathLike) -> None:
    """CSV `class_id,channel,keep,reason`."""
    rows = (
        (mask.class_id, i, int(mask.keep[i]), mask.reason(i))
        for mask in masks for i in range(mask.channels)
    )
    atomic_write(path, csv_text(MASK_HEADER, rows))


def read_masks_csv(path: PathLike) -> List[EditMask]:
    """Читает маски, записанные write_masks_csv."""
    rows: Dict[int, Dict[int, tuple]] = {}
    for line, cells in read_csv_rows(path, MASK_HEADER):
        try:
            class_id, channel, keep = int(cells[0]), int(cells[1]), int(cells[2])
        except ValueError as e:
            raise ParseError(f"нечисловое поле: {e}", line=line) from e
        reason = cells[3]
        if keep not in (0, 1) or reason not in ('kept', 'intra', 'inter', 'both'):
            raise ParseError(f"некорректные keep/reason: {keep}, {reason!r}", line=line)
        if (reason == 'kept') != (keep == 1):
            raise ParseError(f"keep={keep} противоречит reason={reason!r}", line=line)
        rows.setdefault(class_id, {})[channel] = (keep, reason)

    masks = []
    for class_id in sorted(rows):
        entries = rows[class_id]
        channels = len(entries)
        if sorted(entries) != list(range(channels)):
            raise ParseError(f"класс {class_id}: каналы должны быть 0..{channels - 1} без пропусков")
        keep = np.array([entries[i][0] == 1 for i in range(channels)])
        intra = frozenset(i for i in range(channels) if entries[i][1] in ('intra', 'both'))
        inter = frozenset(i for i in range(channels) if entries[i][1] in ('inter', 'both'))
        masks.append(EditMask(class_id=class_id, keep=keep, dropped_intra=intra, dropped_inter=inter))
    return masks
