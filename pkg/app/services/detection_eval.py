"""
Оценка детекций: IoU, подавление немаксимумов, кривые precision/recall и AP в духе PASCAL VOC.
"""

from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..config import EvalConfig
from ..errors import ClassIdError, InputContractError
from ..types import Box, DetectionRecord, EvalReport, GroundTruthRecord, PrCurve
from .logger import get_logger
from .util import PathLike, atomic_write, csv_text

logger = get_logger('detection_eval')

NO_GROUND_TRUTH = 'no_ground_truth'
EVAL_HEADER = ('class_id', 'ap', 'num_gt', 'num_tp', 'num_fp')


def iou(a: Box, b: Box) -> float:
    """Пересечение / объединение; площадь = (x2−x1)·(y2−y1)."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return float(inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Попарные IoU массивов рамок (N, 4) × (M, 4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def _score_order(scores: np.ndarray) -> np.ndarray:
    """По убыванию оценки, ничьи — по возрастанию индекса вставки."""
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind='stable')


def nms(dets: Sequence[DetectionRecord], iou_thresh: float = 0.3) -> List[DetectionRecord]:
    """
    Жадное подавление: берётся лучшая оставшаяся детекция, все с IoU > iou_thresh к ней отбрасываются.

    Все детекции должны относиться к одному изображению и одному классу.
    """
    if not dets:
        return []
    keys = {(d.image_id, d.class_id) for d in dets}
    if len(keys) > 1:
        raise InputContractError(f"NMS ожидает одно изображение и один класс, получено {sorted(keys)}")

    boxes = np.array([d.box for d in dets], dtype=np.float64)
    order = _score_order(np.array([d.score for d in dets]))
    keep: List[int] = []
    while order.size > 0:
        i = int(order[0])
        keep.append(i)
        overlaps = iou_matrix(boxes[i], boxes[order[1:]])[0]
        order = order[1:][overlaps <= iou_thresh]
    return [dets[i] for i in keep]


def nms_all(dets: Sequence[DetectionRecord], iou_thresh: float = 0.3) -> List[DetectionRecord]:
    """NMS независимо для каждой пары (класс, изображение); результат упорядочен по этой паре."""
    groups: Dict[Tuple[int, int], List[DetectionRecord]] = defaultdict(list)
    for d in dets:
        groups[(d.class_id, d.image_id)].append(d)
    kept: List[DetectionRecord] = []
    for key in sorted(groups):
        kept.extend(nms(groups[key], iou_thresh))
    logger.debug(f"🧹 NMS: {len(dets)} → {len(kept)} детекций")
    return kept


def _eleven_point(recall: np.ndarray, precision: np.ndarray) -> float:
    values = []
    # k/10, а не linspace: linspace даёт 0.30000000000000004 и теряет recall = 3/10
    for r in (k / 10.0 for k in range(11)):
        reached = recall >= r
        values.append(float(precision[reached].max()) if reached.any() else 0.0)
    return sum(values) / 11.0


def _continuous(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    # Монотонная огибающая справа налево
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changes = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def ap_from_curve(recall: np.ndarray, precision: np.ndarray, mode: str = 'eleven_point') -> float:
    """AP по точкам кривой: 11 точек (VOC2007) или площадь под огибающей."""
    recall = np.asarray(recall, dtype=np.float64)
    precision = np.asarray(precision, dtype=np.float64)
    if recall.size == 0:
        return 0.0
    return _eleven_point(recall, precision) if mode == 'eleven_point' else _continuous(recall, precision)


def average_precision(dets: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord],
                      cfg: Optional[EvalConfig] = None, class_id: Optional[int] = None) -> PrCurve:
    """
    Кривая precision/recall и AP одного класса.

    Детекция сопоставляется с несопоставленным «не трудным» эталоном наибольшего IoU, если IoU ≥ match_iou.
    Иначе, если она перекрывает трудный эталон на ≥ match_iou, она игнорируется; в остальных случаях это FP.
    """
    cfg = cfg or EvalConfig()
    if class_id is None:
        ids = {d.class_id for d in dets} | {g.class_id for g in gts}
        class_id = min(ids) if ids else 0

    by_image: Dict[int, List[GroundTruthRecord]] = defaultdict(list)
    for g in gts:
        by_image[g.image_id].append(g)
    gt_boxes = {img: np.array([g.box for g in items], dtype=np.float64) for img, items in by_image.items()}
    gt_difficult = {img: np.array([g.difficult for g in items]) for img, items in by_image.items()}
    matched = {img: np.zeros(len(items), dtype=bool) for img, items in by_image.items()}
    num_gt = int(sum(not g.difficult for g in gts))

    tp_flags: List[int] = []
    order = _score_order(np.array([d.score for d in dets])) if dets else []
    for idx in order:
        det = dets[int(idx)]
        boxes = gt_boxes.get(det.image_id)
        if boxes is None:
            tp_flags.append(0)
            continue
        overlaps = iou_matrix(det.box, boxes)[0]
        difficult = gt_difficult[det.image_id]
        free = ~difficult & ~matched[det.image_id]
        candidates = np.where(free, overlaps, -1.0)
        best = int(np.argmax(candidates))
        if candidates[best] >= cfg.match_iou:
            matched[det.image_id][best] = True
            tp_flags.append(1)
        elif (difficult & (overlaps >= cfg.match_iou)).any():
            continue
        else:
            tp_flags.append(0)

    flags = np.array(tp_flags, dtype=np.int64)
    tp = np.cumsum(flags)
    fp = np.cumsum(1 - flags)
    if num_gt > 0:
        recall = tp / float(num_gt)
    else:
        recall = np.zeros(flags.shape[0])
    precision = tp / np.maximum(tp + fp, 1)

    warning = None
    if num_gt == 0:
        warning = NO_GROUND_TRUTH
        ap = 0.0
        logger.warning(f"⚠️ Класс {class_id}: нет эталонов, AP принят равным 0", extra={'class_id': class_id})
    else:
        ap = ap_from_curve(recall, precision, cfg.ap_mode)

    return PrCurve(
        class_id=class_id, recall=recall.astype(np.float64), precision=precision.astype(np.float64),
        ap=ap, num_tp=int(flags.sum()), num_fp=int((1 - flags).sum()), num_gt=num_gt, warning=warning,
    )


def evaluate(dets: Sequence[DetectionRecord], gts: Sequence[GroundTruthRecord],
             cfg: Optional[EvalConfig] = None, num_classes: Optional[int] = None) -> EvalReport:
    """AP по каждому классу из [0, T) и mAP — их невзвешенное среднее."""
    cfg = cfg or EvalConfig()
    if num_classes is None:
        num_classes = max((g.class_id for g in gts), default=-1) + 1
    for g in gts:
        if not 0 <= g.class_id < num_classes:
            raise ClassIdError(f"эталон с неизвестным классом {g.class_id}")
    for d in dets:
        if not 0 <= d.class_id < num_classes:
            raise ClassIdError(f"детекция с неизвестным классом {d.class_id}")
    if num_classes == 0:
        raise ClassIdError("нет ни одного класса для оценки")

    dets_by_class: Dict[int, List[DetectionRecord]] = defaultdict(list)
    gts_by_class: Dict[int, List[GroundTruthRecord]] = defaultdict(list)
    for d in dets:
        dets_by_class[d.class_id].append(d)
    for g in gts:
        gts_by_class[g.class_id].append(g)

    per_class = {
        c: average_precision(dets_by_class[c], gts_by_class[c], cfg, class_id=c)
        for c in range(num_classes)
    }
    mean_ap = float(np.mean([curve.ap for curve in per_class.values()]))
    logger.info(f"🎯 mAP = {mean_ap:.4f} по {num_classes} классам")
    return EvalReport(per_class=per_class, mean_ap=mean_ap)


def write_eval_csv(report: EvalReport, path: PathLike) -> None:
    """CSV `class_id,ap,num_gt,num_tp,num_fp`."""
    rows = (
        (c, float(curve.ap), curve.num_gt, curve.num_tp, curve.num_fp)
        for c, curve in sorted(report.per_class.items())
    )
    atomic_write(path, csv_text(EVAL_HEADER, rows))


def write_pr_curves(report: EvalReport, directory: PathLike) -> List[Path]:
    """Файлы pr_class<k>.csv с точками `recall,precision`."""
    paths = []
    for c, curve in sorted(report.per_class.items()):
        path = Path(directory) / f'pr_class{c}.csv'
        atomic_write(path, csv_text(('recall', 'precision'), curve.points()))
        paths.append(path)
    return paths
