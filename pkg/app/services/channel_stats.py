"""
Статистики каналов: эксцесс, ранжирование активаций, энтропия, PCA на две компоненты.
"""

import math
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..errors import (
    ChannelIndexError, DomainError, EmptyInputError, GeometryError, InsufficientDataError,
    NonFiniteValueError, ShapeError, UndefinedDistributionError,
)
from ..types import ChannelStatsMatrix, Dataset, EditMask, FeatureMap, PcaResult, ProbabilityVector
from .logger import get_logger
from .util import PathLike, atomic_write, csv_text

logger = get_logger('channel_stats')

PCA_TOLERANCE = 1e-12
PCA_MAX_ITER = 10_000
PCA_SEED = 0
PROBABILITY_SUM_TOL = 1e-12
STATS_CHUNK = 1024


def kurtosis_of_units(units: np.ndarray) -> np.ndarray:
    """
    Эксцесс по последней оси: mean((a−ā)⁴)/mean((a−ā)²)² − 3.

    Моменты популяционные, вычисления в float64. Для постоянного канала — 0.
    Отклонения нормируются на max|a−ā|, поэтому результат не зависит от сдвига и масштаба канала.
    """
    a = np.asarray(units, dtype=np.float64)
    n = a.shape[-1]
    constant = a.max(axis=-1) == a.min(axis=-1)
    centered = a - a.mean(axis=-1, keepdims=True)
    # Второй проход убирает ошибку округления среднего
    centered -= centered.mean(axis=-1, keepdims=True)
    spread = np.abs(centered).max(axis=-1, keepdims=True)
    flat = constant | (spread[..., 0] == 0)
    with np.errstate(divide='ignore', invalid='ignore'):
        z = centered / spread
        sq = z * z
        s2 = sq.sum(axis=-1)
        ratio = n * (sq * sq).sum(axis=-1) / (s2 * s2)
    return np.where(flat, 0.0, ratio - 3.0)


def channel_kurtosis(m: FeatureMap) -> np.ndarray:
    """Вектор из C эксцессов для одной карты признаков."""
    c, s = m.channels, m.spatial
    return kurtosis_of_units(m.values.reshape(c, s * s))


def stats_matrix(d: Dataset) -> ChannelStatsMatrix:
    """Матрица K (N×C): строка j — эксцессы каналов выборки j."""
    n = len(d)
    if n == 0:
        raise EmptyInputError("нельзя посчитать статистики пустого набора")
    units = d.features.reshape(n, d.channels, d.spatial * d.spatial)
    out = np.empty((n, d.channels), dtype=np.float64)
    # Блоками: промежуточные float64-массивы не должны расти с N
    for start in range(0, n, STATS_CHUNK):
        stop = min(start + STATS_CHUNK, n)
        out[start:stop] = kurtosis_of_units(units[start:stop])
    logger.debug(f"📐 Матрица эксцессов {n}×{d.channels}")
    return ChannelStatsMatrix(out)


def central_window(spatial: int) -> slice:
    """Центральное окно 2×2: строки/столбцы {⌊(S−1)/2⌋, ⌊(S−1)/2⌋+1}."""
    if spatial < 2:
        raise GeometryError(f"центральное окно 2×2 требует S ≥ 2, получено S={spatial}")
    start = (spatial - 1) // 2
    return slice(start, start + 2)


def central_maxima(d: Dataset, channel: int) -> np.ndarray:
    """Максимум центрального окна 2×2 канала для каждой выборки."""
    if not 0 <= channel < d.channels:
        raise ChannelIndexError(f"канал {channel} вне [0, {d.channels})")
    window = central_window(d.spatial)
    return d.features[:, channel, window, window].reshape(len(d), -1).max(axis=1) if len(d) else np.zeros(0)


def rank_channel_activations(d: Dataset, channel: int, k: int = 9) -> List[int]:
    """Индексы k выборок с наибольшей активацией в центре канала; ничьи — по возрастанию индекса."""
    if k < 0:
        raise DomainError(f"k должно быть неотрицательным, получено {k}")
    scores = central_maxima(d, channel)
    order = np.argsort(-scores.astype(np.float64), kind='stable')
    return [int(i) for i in order[:min(k, len(d))]]


def _check_probability(p: ProbabilityVector) -> np.ndarray:
    if p.undefined:
        raise UndefinedDistributionError("распределение не определено (все дисперсии нулевые)")
    entries = np.asarray(p.entries, dtype=np.float64)
    if entries.ndim != 1 or not np.isfinite(entries).all() or (entries < 0).any():
        raise DomainError("вероятности должны быть конечными и неотрицательными")
    if abs(math.fsum(entries) - 1.0) > PROBABILITY_SUM_TOL:
        raise DomainError(f"сумма вероятностей {math.fsum(entries)!r} отличается от 1")
    return entries


def shannon_entropy(p: ProbabilityVector) -> float:
    """Энтропия −Σ p ln p в натах, 0·ln 0 = 0."""
    entries = _check_probability(p)
    positive = entries[entries > 0]
    return float(-np.sum(positive * np.log(positive))) + 0.0


def mask_expectation(p: ProbabilityVector, mask: EditMask) -> float:
    """Сохранённая маской масса вероятности: Σ p_i·keep_i."""
    entries = _check_probability(p)
    if mask.channels != entries.shape[0]:
        raise ShapeError(f"длина маски {mask.channels} ≠ длине распределения {entries.shape[0]}")
    return float(np.dot(entries, mask.keep.astype(np.float64)))


# --- PCA ---------------------------------------------------------------------------

def _orthogonalize(v: np.ndarray, basis: Sequence[np.ndarray]) -> np.ndarray:
    for b in basis:
        v = v - np.dot(b, v) * b
    return v


def _leading_eigenpair(a: np.ndarray, basis: Sequence[np.ndarray], rng: np.random.Generator,
                       floor: float) -> tuple:
    """Степенной метод для симметричной PSD-матрицы, ортогонально уже найденным векторам."""
    dim = a.shape[0]
    v = _orthogonalize(rng.standard_normal(dim), basis)
    v /= np.linalg.norm(v)
    eigenvalue = float(v @ a @ v)

    for iteration in range(1, PCA_MAX_ITER + 1):
        w = _orthogonalize(a @ v, basis)
        norm = float(np.linalg.norm(w))
        if norm <= floor:
            # Оставшийся спектр нулевой: годится любой ортонормированный v
            return v, 0.0, iteration
        v = w / norm
        updated = float(v @ a @ v)
        if abs(updated - eigenvalue) <= PCA_TOLERANCE * max(abs(updated), floor):
            return v, updated, iteration
        eigenvalue = updated

    logger.warning(f"⚠️ Степенной метод не сошёлся за {PCA_MAX_ITER} итераций")
    return v, eigenvalue, PCA_MAX_ITER


def pca_project(vectors: np.ndarray, components: int = 2) -> PcaResult:
    """
    Проекция на главные компоненты через степенной метод с дефляцией.

    Ковариация популяционная (деление на N). Знак базисного вектора выбирается так,
    чтобы его наибольшая по модулю координата была положительной.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"ожидается матрица N×D, получено {x.shape}")
    n, dim = x.shape
    if n < 2:
        raise InsufficientDataError(f"для PCA нужно N ≥ 2, получено {n}")
    if dim < 2 or not 1 <= components <= dim:
        raise ShapeError(f"некорректные размеры: D={dim}, компонент {components}")
    if not np.isfinite(x).all():
        raise NonFiniteValueError("матрица для PCA содержит NaN/Inf")

    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / n
    trace = float(np.trace(cov))
    floor = max(trace, np.finfo(np.float64).tiny) * 1e-14

    rng = np.random.default_rng(PCA_SEED)
    deflated = cov.copy()
    basis: List[np.ndarray] = []
    variances: List[float] = []
    for _ in range(components):
        v, eigenvalue, iterations = _leading_eigenpair(deflated, basis, rng, floor)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        eigenvalue = max(eigenvalue, 0.0)
        basis.append(v)
        variances.append(eigenvalue)
        deflated = deflated - eigenvalue * np.outer(v, v)
        logger.debug(f"📉 Компонента {len(basis)}: λ={eigenvalue:.6g} за {iterations} итераций")

    basis_matrix = np.vstack(basis)
    return PcaResult(
        projections=centered @ basis_matrix.T,
        basis=basis_matrix,
        variances=np.asarray(variances),
        mean=mean,
    )


def project(result: PcaResult, vectors: np.ndarray) -> np.ndarray:
    """Проекция новых векторов на уже найденный базис."""
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != result.basis.shape[1]:
        raise ShapeError(f"ожидается матрица N×{result.basis.shape[1]}, получено {x.shape}")
    return (x - result.mean) @ result.basis.T


# --- экспорт -------------------------------------------------------------------------

def write_stats_csv(stats: ChannelStatsMatrix, path: PathLike) -> None:
    """CSV `sample_index,channel,kurtosis`."""
    n, c = stats.shape
    rows = ((j, i, float(stats.values[j, i])) for j in range(n) for i in range(c))
    atomic_write(path, csv_text(('sample_index', 'channel', 'kurtosis'), rows))


def write_pca_csv(projections: np.ndarray, class_ids: np.ndarray, path: PathLike) -> None:
    """CSV `sample_index,pc1,pc2,class_id` для внешней визуализации."""
    rows = (
        (j, float(projections[j, 0]), float(projections[j, 1]), int(class_ids[j]))
        for j in range(projections.shape[0])
    )
    atomic_write(path, csv_text(('sample_index', 'pc1', 'pc2', 'class_id'), rows))


def edited_path(path: PathLike, suffix: str = '_edited') -> Path:
    """Имя парного файла: pca.csv → pca_edited.csv."""
    p = Path(path)
    return p.with_name(p.stem + suffix + p.suffix)

