"""
Медленные эталоны для проверки основных модулей.

Ничего не импортируют из остальных сервисов: каждая формула переписана заново «в лоб»
(циклы Python, math.fsum, statistics). Работают только на малых входах.
"""

import math
import statistics
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..errors import OracleScaleError
from ..types import Dataset, DetectionRecord, GroundTruthRecord

MAX_SAMPLES = 1000
MAX_BOXES_PER_IMAGE = 50
SVM_MAX_ITER = 100_000
SVM_CHECK_EVERY = 500
SVM_GAP_RTOL = 1e-12


def _check_samples(n: int) -> None:
    if n > MAX_SAMPLES:
        raise OracleScaleError(f"эталон рассчитан на ≤ {MAX_SAMPLES} выборок, получено {n}")


def _check_boxes(n: int) -> None:
    if n > MAX_BOXES_PER_IMAGE:
        raise OracleScaleError(f"эталон рассчитан на ≤ {MAX_BOXES_PER_IMAGE} рамок на изображение, получено {n}")


# --- статистики каналов -----------------------------------------------------------

def oracle_kurtosis(values: Sequence[float]) -> float:
    """E[(a−ā)⁴] / E[(a−ā)²]² − 3; для постоянного канала 0."""
    a = [float(v) for v in values]
    n = len(a)
    if min(a) == max(a):
        return 0.0
    mean = math.fsum(a) / n
    m2 = math.fsum((v - mean) ** 2 for v in a) / n
    if m2 == 0.0:
        return 0.0
    m4 = math.fsum((v - mean) ** 4 for v in a) / n
    return m4 / (m2 * m2) - 3.0


def oracle_stats(d: Dataset) -> List[List[float]]:
    """Матрица эксцессов построчно: выборка → канал."""
    _check_samples(len(d))
    rows = []
    for sample in d.features.tolist():
        rows.append([oracle_kurtosis([u for row in channel for u in row]) for channel in sample])
    return rows


def oracle_rank(d: Dataset, channel: int, k: int = 9) -> List[int]:
    """Полная сортировка максимумов центрального окна 2×2 по убыванию, ничьи — по индексу."""
    _check_samples(len(d))
    s = d.spatial
    lo = (s - 1) // 2
    window = (lo, lo + 1)
    scored = []
    for j, sample in enumerate(d.features.tolist()):
        plane = sample[channel]
        best = max(plane[r][c] for r in window for c in window)
        scored.append((-best, j))
    scored.sort()
    return [j for _, j in scored[:min(k, len(scored))]]


def oracle_entropy(p: Sequence[float]) -> float:
    return -math.fsum(v * math.log(v) for v in p if v > 0)


# --- профиль дисперсий и маски ---------------------------------------------------

def oracle_profile(stats: Sequence[Sequence[float]], labels: Sequence[int],
                   num_classes: int) -> Tuple[List[List[float]], List[float]]:
    """
    intra[c][i] — популяционная дисперсия столбца i по строкам класса c,
    inter[i] — популяционная дисперсия средних по классам (каждый класс с весом 1).
    """
    _check_samples(len(stats))
    channels = len(stats[0])
    intra: List[List[float]] = []
    means: List[List[float]] = []
    for c in range(num_classes):
        rows = [row for row, label in zip(stats, labels) if label == c]
        intra.append([statistics.pvariance([row[i] for row in rows]) for i in range(channels)])
        means.append([statistics.fmean([row[i] for row in rows]) for i in range(channels)])
    inter = [statistics.pvariance([means[c][i] for c in range(num_classes)]) for i in range(channels)]
    return intra, inter


def _count(frac: float, channels: int) -> int:
    return math.floor(Fraction(str(frac)) * channels)


def _select(values: Sequence[float], count: int, largest: bool) -> Set[int]:
    if math.fsum(values) == 0.0 or count == 0:
        return set()
    order = sorted(range(len(values)), key=lambda i: (-values[i] if largest else values[i], i))
    return set(order[:count])


def oracle_mask(intra_row: Sequence[float], inter: Sequence[float], intra_frac: float = 0.2,
                inter_frac: float = 0.3) -> Tuple[Set[int], Set[int]]:
    """Множества (dropped_intra, dropped_inter) полной сортировкой."""
    channels = len(inter)
    dropped_intra = _select(intra_row, _count(intra_frac, channels), largest=True)
    dropped_inter = _select(inter, _count(inter_frac, channels), largest=False)
    return dropped_intra, dropped_inter


# --- детекции --------------------------------------------------------------------

def oracle_iou(a: Sequence[float], b: Sequence[float]) -> float:
    ix1, iy1 = max(a[0], b[0]), max(a[1], b[1])
    ix2, iy2 = min(a[2], b[2]), min(a[3], b[3])
    if ix2 <= ix1 or iy2 <= iy1:
        return 0.0
    inter = (ix2 - ix1) * (iy2 - iy1)
    area_a = (a[2] - a[0]) * (a[3] - a[1])
    area_b = (b[2] - b[0]) * (b[3] - b[1])
    return inter / (area_a + area_b - inter)


def oracle_nms(dets: Sequence[DetectionRecord], iou_thresh: float = 0.3) -> List[DetectionRecord]:
    """Жадное определение NMS на явных множествах индексов."""
    _check_boxes(len(dets))
    remaining = set(range(len(dets)))
    kept: List[int] = []
    while remaining:
        best = min(remaining, key=lambda i: (-dets[i].score, i))
        kept.append(best)
        remaining = {
            j for j in remaining
            if j != best and oracle_iou(dets[best].box, dets[j].box) <= iou_thresh
        }
    return [dets[i] for i in kept]


def oracle_ap(dets: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord], match_iou: float = 0.5,
              ap_mode: str = 'eleven_point') -> Tuple[float, List[Tuple[float, float]]]:
    """AP одного класса и точки (recall, precision) протокола VOC."""
    per_image: Dict[int, int] = {}
    for g in gts:
        per_image[g.image_id] = per_image.get(g.image_id, 0) + 1
    for count in per_image.values():
        _check_boxes(count)

    num_gt = sum(1 for g in gts if not g.difficult)
    used: Set[int] = set()
    tp = fp = 0
    points: List[Tuple[float, float]] = []
    for i in sorted(range(len(dets)), key=lambda i: (-dets[i].score, i)):
        det = dets[i]
        best, best_iou = None, -1.0
        for gi, g in enumerate(gts):
            if g.image_id != det.image_id or g.difficult or gi in used:
                continue
            overlap = oracle_iou(det.box, g.box)
            if overlap > best_iou:
                best, best_iou = gi, overlap
        if best is not None and best_iou >= match_iou:
            used.add(best)
            tp += 1
        elif any(g.image_id == det.image_id and g.difficult and oracle_iou(det.box, g.box) >= match_iou
                 for g in gts):
            continue
        else:
            fp += 1
        recall = tp / num_gt if num_gt else 0.0
        points.append((recall, tp / (tp + fp)))

    if num_gt == 0 or not points:
        return 0.0, points
    if ap_mode == 'eleven_point':
        total = 0.0
        for step in range(11):
            r = step / 10.0
            reached = [p for rec, p in points if rec >= r]
            total += max(reached) if reached else 0.0
        return total / 11.0, points

    area = 0.0
    prev_recall = 0.0
    for k, (recall, _) in enumerate(points):
        if recall > prev_recall:
            envelope = max(p for _, p in points[k:])
            area += (recall - prev_recall) * envelope
            prev_recall = recall
    return area, points


# --- линейные модели --------------------------------------------------------------

def oracle_svm_objective(w: Sequence[float], b: float, features: Sequence[Sequence[float]],
                         labels: Sequence[int], reg_lambda: float,
                         weights: Optional[Sequence[float]] = None) -> float:
    """(λ/2)‖w‖² + (1/N)Σ c_i·max(0, 1 − y_i(w·x_i + b)), по слагаемым."""
    n = len(features)
    c = weights if weights is not None else [1.0] * n
    hinge = []
    for x, y, ci in zip(features, labels, c):
        margin = y * (math.fsum(wi * xi for wi, xi in zip(w, x)) + b)
        hinge.append(ci * max(0.0, 1.0 - margin))
    return 0.5 * reg_lambda * math.fsum(wi * wi for wi in w) + math.fsum(hinge) / n


def _project(v: np.ndarray, y: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Точная проекция на {0 ≤ α ≤ C, yᵀα = 0} поиском излома кусочно-линейной функции сдвига."""
    points = np.sort(np.concatenate([y * v, y * (v - upper)]))
    alphas = np.clip(v[None, :] - points[:, None] * y[None, :], 0.0, upper[None, :])
    balance = alphas @ y
    k = int(np.flatnonzero(balance >= 0)[-1])
    if balance[k] == 0 or k == len(points) - 1:
        tau = points[k]
    else:
        tau = points[k] + balance[k] * (points[k + 1] - points[k]) / (balance[k] - balance[k + 1])
    return np.clip(v - tau * y, 0.0, upper)


def _exact_bias(w: np.ndarray, x: np.ndarray, y: np.ndarray, c: np.ndarray) -> float:
    candidates = y - x @ w
    losses = [float(np.dot(c, np.maximum(0.0, 1.0 - y * (x @ w + b)))) for b in candidates]
    return float(candidates[int(np.argmin(losses))])


def oracle_svm(features: np.ndarray, labels: Sequence[int], reg_lambda: float,
               weights: Optional[Sequence[float]] = None,
               max_iter: int = SVM_MAX_ITER) -> Tuple[np.ndarray, float, float]:
    """
    Долгий ускоренный проекционный градиент по двойственной задаче SVM.

    Возвращает (w, b, значение прямой целевой функции); смещение подбирается перебором изломов.
    Останов — относительный зазор двойственности ≤ SVM_GAP_RTOL или max_iter итераций.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n = x.shape[0]
    _check_samples(n)
    c = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    upper = c / (reg_lambda * n)
    z = y[:, None] * x
    q = z @ z.T
    step = 1.0 / max(float(np.linalg.eigvalsh(q)[-1]), 1e-300)

    def dual(a: np.ndarray) -> float:
        return float(a.sum() - 0.5 * a @ q @ a)

    def primal(a: np.ndarray) -> Tuple[np.ndarray, float, float]:
        w = z.T @ a
        b = _exact_bias(w, x, y, c)
        value = 0.5 * reg_lambda * float(w @ w) + float(np.dot(c, np.maximum(0.0, 1.0 - y * (x @ w + b)))) / n
        return w, b, value

    alpha = np.zeros(n)
    momentum = alpha.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        grad = q @ momentum - 1.0
        nxt = _project(momentum - step * grad, y, upper)
        # Рестарт ускорения, если двойственная функция перестала расти
        if dual(nxt) < dual(alpha):
            t = 1.0
            momentum = alpha.copy()
            continue
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        momentum = nxt + ((t - 1.0) / t_next) * (nxt - alpha)
        alpha, t = nxt, t_next
        if it % SVM_CHECK_EVERY == 0:
            _, _, value = primal(alpha)
            if value - reg_lambda * dual(alpha) <= SVM_GAP_RTOL * max(value, 1e-300):
                break
    return primal(alpha)


def oracle_ridge(features: np.ndarray, targets: np.ndarray, ridge_lambda: float) -> Tuple[np.ndarray, np.ndarray]:
    """Плотные нормальные уравнения с нерегуляризуемым столбцом единиц: (weights (4, D), biases (4,))."""
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    n, dim = x.shape
    _check_samples(n)
    augmented = np.hstack([x, np.ones((n, 1))])
    penalty = np.diag(np.r_[np.full(dim, ridge_lambda), 0.0])
    theta = np.linalg.solve(augmented.T @ augmented / n + penalty, augmented.T @ t / n)
    return theta[:dim].T, theta[dim]


def oracle_pca_variances(vectors: np.ndarray, components: int = 2) -> np.ndarray:
    """Старшие собственные значения популяционной ковариации полным разложением."""
    x = np.asarray(vectors, dtype=np.float64)
    _check_samples(x.shape[0])
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / x.shape[0]
    return np.sort(np.linalg.eigvalsh(cov))[::-1][:components]
