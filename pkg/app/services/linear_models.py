"""
Линейные модели поверх развёрнутых карт признаков.

SVM: L2-регуляризация + L1 hinge, смещение не регуляризуется:
    (λ/2)·‖w‖² + (1/N)·Σ c_i·max(0, 1 − y_i(w·x_i + b)),  c_i = positive_weight для y_i = +1, иначе 1.
Решается двойственная задача попарными шагами (выбор пары по второму порядку),
после каждой эпохи смещение подбирается точно и запоминается лучший прямой итерат.

Регрессор рамок: гребневая регрессия четырёх целей (tx, ty, tw, th).
"""

import struct
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import SvmConfig
from ..errors import (
    DegenerateLabelsError, DomainError, EmptyInputError, FormatError, GeometryError, IoError,
    ShapeError, TruncationError,
)
from ..types import Box, BoxRegressor, Dataset, DetectionRecord, GroundTruthRecord, LinearModel, check_box
from .detection_eval import iou_matrix
from .logger import get_logger
from .util import PathLike, atomic_write

logger = get_logger('linear_models')

# Полная матрица Грама строится до этого числа выборок, дальше строки считаются по запросу
GRAM_LIMIT = 6000
KKT_EPS = 1e-9
TAU = 1e-12
LOG_SIZE_LIMIT = 10.0

MODEL_MAGIC = b'LMOD1'
REGRESSOR_MAGIC = b'LREG1'
_MODEL_HEAD = struct.Struct('<5sI')
_REGRESSOR_HEAD = struct.Struct('<5sIId')


# --- SVM: целевая функция и оценка ---------------------------------------------------------

def _as_matrix(features: np.ndarray, dimension: Optional[int] = None) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2:
        raise ShapeError(f"ожидается матрица N×D, получено {x.shape}")
    if dimension is not None and x.shape[1] != dimension:
        raise ShapeError(f"размерность признаков {x.shape[1]} ≠ размерности модели {dimension}")
    return x


def _labels(labels: Sequence[int], n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if y.shape[0] != n:
        raise ShapeError(f"число меток {y.shape[0]} ≠ числу выборок {n}")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise DomainError("метки SVM должны быть ±1")
    return y


def svm_objective(model: LinearModel, features: np.ndarray, labels: Sequence[int], reg_lambda: float,
                  weights: Optional[np.ndarray] = None) -> float:
    """(λ/2)‖w‖² + (1/N)Σ c_i·max(0, 1 − y(w·x + b))."""
    x = _as_matrix(features, model.dimension)
    if x.shape[0] == 0:
        raise EmptyInputError("целевая функция SVM на пустых данных не определена")
    y = _labels(labels, x.shape[0])
    c = np.ones_like(y) if weights is None else np.asarray(weights, dtype=np.float64)
    margins = y * (x @ model.weights + model.bias)
    hinge = np.maximum(0.0, 1.0 - margins)
    w = np.asarray(model.weights, dtype=np.float64)
    return float(0.5 * reg_lambda * np.dot(w, w) + np.dot(c, hinge) / x.shape[0])


def score(model: LinearModel, feature: np.ndarray) -> float:
    """w·x + b."""
    x = np.asarray(feature, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.dimension:
        raise ShapeError(f"размерность признака {x.shape[0]} ≠ размерности модели {model.dimension}")
    return float(np.dot(model.weights, x) + model.bias)


def score_batch(model: LinearModel, features: np.ndarray) -> np.ndarray:
    """Оценки для матрицы признаков N×D."""
    x = _as_matrix(features, model.dimension)
    return x @ model.weights + model.bias


# --- SVM: обучение ------------------------------------------------------------------------

def best_bias(margins_wo_bias: np.ndarray, y: np.ndarray, c: np.ndarray) -> float:
    """
    Точный минимум Σ c_i·max(0, 1 − y_i(s_i + b)) по b.

    Функция кусочно-линейная и выпуклая; минимум достигается в изломе b = y_i − s_i.
    """
    t = y - margins_wo_bias
    order = np.argsort(t, kind='stable')
    ts = t[order]
    pos = np.where(y[order] > 0, c[order], 0.0)
    neg = np.where(y[order] < 0, c[order], 0.0)
    cum_pos = np.cumsum(pos)
    cum_neg = np.cumsum(neg)
    last = np.searchsorted(ts, ts, side='right') - 1
    # Наклон справа от излома: −(положительные правее) + (отрицательные левее или в нём)
    slope = -(cum_pos[-1] - cum_pos[last]) + cum_neg[last]
    first = int(np.argmax(slope >= 0))
    return float(ts[first])


class _PairwiseDualSolver:
    """Попарные шаги по двойственной задаче: min ½αᵀQα − eᵀα, 0 ≤ α ≤ C, yᵀα = 0."""

    def __init__(self, x: np.ndarray, y: np.ndarray, upper: np.ndarray):
        self.x = x
        self.y = y
        self.upper = upper
        n = y.shape[0]
        self.gram = x @ x.T if n <= GRAM_LIMIT else None
        self.diag = np.einsum('ij,ij->i', x, x)
        self.alpha = np.zeros(n)
        self.grad = -np.ones(n)
        self.w = np.zeros(x.shape[1])

    def _row(self, i: int) -> np.ndarray:
        return self.gram[i] if self.gram is not None else self.x @ self.x[i]

    def select(self) -> Tuple[Optional[tuple], float]:
        """Пара (i, j) с наибольшим нарушением условий ККТ или None, если решение найдено."""
        y, a, c = self.y, self.alpha, self.upper
        minus_yg = -y * self.grad
        up = ((y > 0) & (a < c)) | ((y < 0) & (a > 0))
        low = ((y > 0) & (a > 0)) | ((y < 0) & (a < c))
        if not up.any() or not low.any():
            return None, 0.0
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        g_max = minus_yg[i]
        gap = float(g_max - np.min(np.where(low, minus_yg, np.inf)))
        if gap < KKT_EPS:
            return None, gap

        k_i = self._row(i)
        b = g_max - minus_yg
        candidates = low & (b > 0)
        if not candidates.any():
            return None, gap
        quad = self.diag[i] + self.diag - 2.0 * k_i
        quad = np.where(quad > 0, quad, TAU)
        gain = np.where(candidates, -(b * b) / quad, np.inf)
        return (i, int(np.argmin(gain)), k_i), gap

    def update(self, i: int, j: int, k_i: np.ndarray) -> None:
        """Аналитический шаг по паре с отсечением по границам."""
        y, a, g = self.y, self.alpha, self.grad
        k_j = self._row(j)
        c_i, c_j = self.upper[i], self.upper[j]
        old_i, old_j = a[i], a[j]
        quad = self.diag[i] + self.diag[j] - 2.0 * k_i[j]
        if quad <= 0:
            quad = TAU

        if y[i] != y[j]:
            delta = (-g[i] - g[j]) / quad
            diff = a[i] - a[j]
            a[i] += delta
            a[j] += delta
            if diff > 0:
                if a[j] < 0:
                    a[j] = 0.0
                    a[i] = diff
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = -diff
            if diff > c_i - c_j:
                if a[i] > c_i:
                    a[i] = c_i
                    a[j] = c_i - diff
            elif a[j] > c_j:
                a[j] = c_j
                a[i] = c_j + diff
        else:
            delta = (g[i] - g[j]) / quad
            total = a[i] + a[j]
            a[i] -= delta
            a[j] += delta
            if total > c_i:
                if a[i] > c_i:
                    a[i] = c_i
                    a[j] = total - c_i
            elif a[j] < 0:
                a[j] = 0.0
                a[i] = total
            if total > c_j:
                if a[j] > c_j:
                    a[j] = c_j
                    a[i] = total - c_j
            elif a[i] < 0:
                a[i] = 0.0
                a[j] = total

        d_i = (a[i] - old_i) * y[i]
        d_j = (a[j] - old_j) * y[j]
        g += y * (d_i * k_i + d_j * k_j)
        self.w += d_i * self.x[i] + d_j * self.x[j]

    def dual_value(self) -> float:
        """Σα − ½‖w‖² (в единицах масштабированной задачи)."""
        return float(self.alpha.sum() - 0.5 * np.dot(self.w, self.w))


def fit_linear_svm(features: np.ndarray, labels: Sequence[int], cfg: SvmConfig, class_id: int = 0) -> LinearModel:
    """
    Обучает линейный SVM на матрице N×D с метками ±1.

    Эпоха — N попарных шагов; бюджет — epochs эпох. Остановка: условия ККТ выполнены,
    относительный зазор двойственности ≤ tolerance, либо за эпоху ни лучшая прямая,
    ни двойственная целевая функция не улучшились более чем на tolerance.
    """
    x = _as_matrix(features)
    n, dim = x.shape
    if n == 0:
        raise EmptyInputError("нет данных для обучения SVM")
    y = _labels(labels, n)
    if (y > 0).all() or (y < 0).all():
        raise DegenerateLabelsError(f"класс {class_id}: в данных только один класс меток")

    order = np.random.default_rng(cfg.seed).permutation(n)
    x, y = x[order], y[order]
    c = np.where(y > 0, cfg.positive_weight, 1.0)
    lam = cfg.reg_lambda

    def primal(w: np.ndarray, b: float) -> float:
        hinge = np.maximum(0.0, 1.0 - y * (x @ w + b))
        return float(0.5 * lam * np.dot(w, w) + np.dot(c, hinge) / n)

    best_w, best_b = np.zeros(dim), 0.0
    best_obj = primal(best_w, best_b)
    solver = _PairwiseDualSolver(x, y, c / (lam * n))
    budget = cfg.epochs * n
    updates = 0
    epochs_run = 0
    prev_best, prev_dual = best_obj, 0.0
    reason = 'epochs'

    while updates < budget:
        optimal = False
        for _ in range(min(n, budget - updates)):
            selected, _gap = solver.select()
            if selected is None:
                optimal = True
                break
            solver.update(*selected)
            updates += 1
        epochs_run += 1

        w = solver.w.copy()
        b = best_bias(x @ w, y, c)
        obj = primal(w, b)
        if obj < best_obj:
            best_w, best_b, best_obj = w, b, obj
        dual = lam * solver.dual_value()
        scale = max(abs(best_obj), 1e-12)

        if optimal:
            reason = 'kkt'
            break
        if best_obj - dual <= cfg.tolerance * scale:
            reason = 'gap'
            break
        if prev_best - best_obj < cfg.tolerance * scale and dual - prev_dual < cfg.tolerance * scale:
            reason = 'stalled'
            break
        prev_best, prev_dual = best_obj, dual

    logger.debug(
        f"🧮 SVM класса {class_id}: {epochs_run} эпох, {updates} шагов, остановка '{reason}', "
        f"целевая {best_obj:.6g}",
        extra={'class_id': class_id},
    )
    return LinearModel(weights=best_w, bias=best_b, class_id=class_id)


def one_vs_rest_labels(d: Dataset, positive_class: int) -> np.ndarray:
    """+1 для positive_class, −1 для остальных."""
    return np.where(d.class_ids == positive_class, 1, -1)


def train_svm(d: Dataset, positive_class: int, cfg: SvmConfig) -> LinearModel:
    """Один-против-всех SVM для positive_class на развёрнутых признаках набора."""
    if len(d) == 0:
        raise EmptyInputError("нет данных для обучения SVM")
    return fit_linear_svm(d.flattened(), one_vs_rest_labels(d, positive_class), cfg, class_id=positive_class)


def classify(models: Sequence[LinearModel], features: np.ndarray) -> np.ndarray:
    """Класс с наибольшей оценкой (ничья — меньший class_id)."""
    ordered = sorted(models, key=lambda m: m.class_id)
    scores = np.column_stack([score_batch(m, features) for m in ordered])
    ids = np.array([m.class_id for m in ordered])
    return ids[np.argmax(scores, axis=1)]


# --- рамки ----------------------------------------------------------------------------

def _center_size(box: Sequence[float], what: str) -> Tuple[float, float, float, float]:
    x1, y1, x2, y2 = check_box(box, what)
    w, h = x2 - x1, y2 - y1
    return x1 + 0.5 * w, y1 + 0.5 * h, w, h


def box_targets(proposal: Box, gt: Box) -> Tuple[float, float, float, float]:
    """Цели (tx, ty, tw, th): сдвиг центра в долях размера и логарифм отношения размеров."""
    px, py, pw, ph = _center_size(proposal, "предложение")
    gx, gy, gw, gh = _center_size(gt, "эталонная рамка")
    return (gx - px) / pw, (gy - py) / ph, float(np.log(gw / pw)), float(np.log(gh / ph))


def apply_transform(box: Box, delta: Sequence[float]) -> Box:
    """Обратное к box_targets: рамка по предложению и (tx, ty, tw, th)."""
    px, py, pw, ph = _center_size(box, "предложение")
    tx, ty, tw, th = (float(v) for v in delta)
    gx, gy = px + tx * pw, py + ty * ph
    gw, gh = pw * float(np.exp(tw)), ph * float(np.exp(th))
    return gx - 0.5 * gw, gy - 0.5 * gh, gx + 0.5 * gw, gy + 0.5 * gh


def apply_transforms(boxes: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Векторная версия apply_transform для массивов (N, 4)."""
    boxes = np.asarray(boxes, dtype=np.float64)
    deltas = np.asarray(deltas, dtype=np.float64)
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    if (w <= 0).any() or (h <= 0).any():
        raise GeometryError("вырожденное предложение")
    cx = boxes[:, 0] + 0.5 * w + deltas[:, 0] * w
    cy = boxes[:, 1] + 0.5 * h + deltas[:, 1] * h
    # Логарифмы размеров ограничены: выбросы регрессора не должны вырождать рамку
    gw = w * np.exp(np.clip(deltas[:, 2], -LOG_SIZE_LIMIT, LOG_SIZE_LIMIT))
    gh = h * np.exp(np.clip(deltas[:, 3], -LOG_SIZE_LIMIT, LOG_SIZE_LIMIT))
    return np.column_stack([cx - 0.5 * gw, cy - 0.5 * gh, cx + 0.5 * gw, cy + 0.5 * gh])


def regression_pairs(d: Dataset, gts: Sequence[GroundTruthRecord], class_id: int,
                     min_iou: float = 0.6) -> Tuple[np.ndarray, np.ndarray]:
    """
    Индексы выборок класса class_id, перекрывающих эталон того же изображения и класса на IoU ≥ min_iou,
    и их цели (tx, ty, tw, th) относительно эталона наибольшего IoU.
    """
    by_image: Dict[int, List[Box]] = {}
    for g in gts:
        if g.class_id == class_id:
            by_image.setdefault(g.image_id, []).append(g.box)

    indices: List[int] = []
    targets: List[Tuple[float, float, float, float]] = []
    for j in np.flatnonzero(d.class_ids == class_id):
        boxes = by_image.get(int(d.image_ids[j]))
        if not boxes:
            continue
        overlaps = iou_matrix(d.boxes[j], np.array(boxes))[0]
        best = int(np.argmax(overlaps))
        if overlaps[best] >= min_iou:
            proposal = tuple(float(v) for v in d.boxes[j])
            indices.append(int(j))
            targets.append(box_targets(proposal, boxes[best]))  # type: ignore[arg-type]
    return np.array(indices, dtype=np.int64), np.array(targets, dtype=np.float64).reshape(-1, 4)


# --- регрессор -------------------------------------------------------------------------

def train_regressor(features: np.ndarray, targets: np.ndarray, ridge_lambda: float,
                    class_id: int = 0) -> BoxRegressor:
    """
    Гребневая регрессия: для каждой цели k минимизирует
    (1/N)·Σ(t_k − w_k·x − b_k)² + λ‖w_k‖².

    Решается на центрированных данных через нормальные уравнения (D ≤ N) или их двойственную форму.
    """
    x = _as_matrix(features)
    t = np.asarray(targets, dtype=np.float64)
    if x.shape[0] == 0:
        raise EmptyInputError("нет данных для обучения регрессора")
    if t.shape != (x.shape[0], 4):
        raise ShapeError(f"цели должны иметь форму ({x.shape[0]}, 4), получено {t.shape}")
    if not ridge_lambda > 0:
        raise DomainError(f"ridge_lambda должен быть > 0, получено {ridge_lambda}")

    n, dim = x.shape
    x_mean = x.mean(axis=0)
    t_mean = t.mean(axis=0)
    xc = x - x_mean
    tc = t - t_mean
    if dim <= n:
        system = xc.T @ xc / n + ridge_lambda * np.eye(dim)
        weights = np.linalg.solve(system, xc.T @ tc / n).T
    else:
        system = xc @ xc.T / n + ridge_lambda * np.eye(n)
        weights = (xc.T @ np.linalg.solve(system, tc / n)).T
    biases = t_mean - weights @ x_mean
    return BoxRegressor(weights=weights, biases=biases, ridge_lambda=ridge_lambda, class_id=class_id)


def predict_targets(reg: BoxRegressor, features: np.ndarray) -> np.ndarray:
    """Предсказанные (tx, ty, tw, th) для матрицы N×D."""
    x = _as_matrix(features, reg.dimension)
    return x @ reg.weights.T + reg.biases


def regressor_objective(reg: BoxRegressor, features: np.ndarray, targets: np.ndarray) -> float:
    """Сумма по четырём целям: (1/N)Σ(t − w·x − b)² + λ‖w‖²."""
    x = _as_matrix(features, reg.dimension)
    residual = np.asarray(targets, dtype=np.float64) - predict_targets(reg, x)
    return float((residual ** 2).sum() / x.shape[0] + reg.ridge_lambda * (reg.weights ** 2).sum())


# --- детекции ------------------------------------------------------------------------------

def predict_detections(d: Dataset, models: Sequence[LinearModel],
                       regressors: Optional[Dict[int, BoxRegressor]] = None) -> List[DetectionRecord]:
    """
    По одной детекции на выборку и класс: оценка SVM класса и (если есть регрессор)
    уточнённая рамка.
    """
    x = d.flattened()
    records: List[DetectionRecord] = []
    for model in sorted(models, key=lambda m: m.class_id):
        scores = score_batch(model, x)
        boxes = d.boxes.astype(np.float64)
        reg = (regressors or {}).get(model.class_id)
        if reg is not None and len(d):
            boxes = apply_transforms(boxes, predict_targets(reg, x))
        for j in range(len(d)):
            records.append(DetectionRecord(
                image_id=int(d.image_ids[j]), class_id=model.class_id,
                score=float(scores[j]), box=tuple(float(v) for v in boxes[j]),  # type: ignore[arg-type]
            ))
    return records


# --- файлы моделей ---------------------------------------------------------------------

def encode_model(model: LinearModel) -> bytes:
    """LMOD1 + u32 D + D×f64 веса + f64 смещение + u32 class_id."""
    weights = np.asarray(model.weights, dtype='<f8')
    return (
        _MODEL_HEAD.pack(MODEL_MAGIC, weights.shape[0])
        + weights.tobytes()
        + struct.pack('<dI', float(model.bias), int(model.class_id))
    )


def decode_model(payload: bytes) -> LinearModel:
    if len(payload) < _MODEL_HEAD.size:
        raise TruncationError("файл модели обрезан")
    magic, dim = _MODEL_HEAD.unpack_from(payload)
    if magic != MODEL_MAGIC:
        raise FormatError(f"неверная магия модели {magic!r}")
    expected = _MODEL_HEAD.size + 8 * dim + 12
    if len(payload) != expected:
        cls = TruncationError if len(payload) < expected else FormatError
        raise cls(f"размер файла модели {len(payload)} ≠ ожидаемому {expected}")
    weights = np.frombuffer(payload, dtype='<f8', count=dim, offset=_MODEL_HEAD.size).astype(np.float64)
    bias, class_id = struct.unpack_from('<dI', payload, _MODEL_HEAD.size + 8 * dim)
    return LinearModel(weights=weights, bias=bias, class_id=class_id)


def encode_regressor(reg: BoxRegressor) -> bytes:
    """LREG1 + u32 D + u32 class_id + f64 λ + 4 × (D×f64 веса + f64 смещение)."""
    parts = [_REGRESSOR_HEAD.pack(REGRESSOR_MAGIC, reg.dimension, int(reg.class_id), float(reg.ridge_lambda))]
    for k in range(4):
        parts.append(np.asarray(reg.weights[k], dtype='<f8').tobytes())
        parts.append(struct.pack('<d', float(reg.biases[k])))
    return b''.join(parts)


def decode_regressor(payload: bytes) -> BoxRegressor:
    if len(payload) < _REGRESSOR_HEAD.size:
        raise TruncationError("файл регрессора обрезан")
    magic, dim, class_id, ridge_lambda = _REGRESSOR_HEAD.unpack_from(payload)
    if magic != REGRESSOR_MAGIC:
        raise FormatError(f"неверная магия регрессора {magic!r}")
    expected = _REGRESSOR_HEAD.size + 4 * 8 * (dim + 1)
    if len(payload) != expected:
        cls = TruncationError if len(payload) < expected else FormatError
        raise cls(f"размер файла регрессора {len(payload)} ≠ ожидаемому {expected}")
    rows = np.frombuffer(payload, dtype='<f8', offset=_REGRESSOR_HEAD.size).reshape(4, dim + 1)
    return BoxRegressor(
        weights=rows[:, :dim].astype(np.float64), biases=rows[:, dim].astype(np.float64),
        ridge_lambda=ridge_lambda, class_id=class_id,
    )


def _read_bytes(path: PathLike) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoError(f"не удалось прочитать {path}: {e}") from e


def write_model(model: LinearModel, path: PathLike) -> None:
    atomic_write(path, encode_model(model))


def read_model(path: PathLike) -> LinearModel:
    return decode_model(_read_bytes(path))


def write_regressor(reg: BoxRegressor, path: PathLike) -> None:
    atomic_write(path, encode_regressor(reg))


def read_regressor(path: PathLike) -> BoxRegressor:
    return decode_regressor(_read_bytes(path))


def model_path(directory: PathLike, class_id: int) -> Path:
    return Path(directory) / f'svm_class{class_id}.lmod'


def regressor_path(directory: PathLike, class_id: int) -> Path:
    return Path(directory) / f'reg_class{class_id}.lreg'


def write_model_bank(directory: PathLike, models: Sequence[LinearModel],
                     regressors: Optional[Dict[int, BoxRegressor]] = None) -> List[Path]:
    """Пишет SVM и регрессоры всех классов в каталог; возвращает пути."""
    written = []
    for model in models:
        path = model_path(directory, model.class_id)
        write_model(model, path)
        written.append(path)
    for class_id, reg in sorted((regressors or {}).items()):
        path = regressor_path(directory, class_id)
        write_regressor(reg, path)
        written.append(path)
    return written


def read_model_bank(directory: PathLike) -> Tuple[List[LinearModel], Dict[int, BoxRegressor]]:
    """Читает все svm_class*.lmod и reg_class*.lreg из каталога."""
    root = Path(directory)
    models = [read_model(p) for p in sorted(root.glob('svm_class*.lmod'))]
    if not models:
        raise IoError(f"в каталоге {root} нет файлов моделей svm_class*.lmod")
    regressors = {reg.class_id: reg for reg in (read_regressor(p) for p in sorted(root.glob('reg_class*.lreg')))}
    return sorted(models, key=lambda m: m.class_id), regressors
