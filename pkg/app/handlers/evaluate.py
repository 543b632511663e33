"""
Подкоманды nms и eval.
"""

import argparse
from pathlib import Path

from ..config import AP_MODES, EvalConfig
from ..services.detection_eval import evaluate, nms_all, write_eval_csv, write_pr_curves
from ..services.feature_store import read_detections, read_ground_truth, write_detections
from .common import echo, locked_output


def cmd_nms(args: argparse.Namespace) -> int:
    """NMS по каждой паре (класс, изображение)."""
    detections = read_detections(args.detections)
    cfg = EvalConfig(nms_iou=args.iou)
    kept = nms_all(detections, cfg.nms_iou)
    with locked_output(args.out):
        write_detections(kept, args.out)
    echo(f"{len(detections)} → {len(kept)} детекций → {args.out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    """AP по классам и mAP; рядом с отчётом — кривые pr_class<k>.csv."""
    detections = read_detections(args.detections)
    gts = read_ground_truth(args.gt)
    cfg = EvalConfig(match_iou=args.match_iou, ap_mode=args.ap_mode)
    report = evaluate(detections, gts, cfg, args.classes)
    out = Path(args.out)
    with locked_output(out):
        write_eval_csv(report, out)
        write_pr_curves(report, args.curves_dir or out.parent)
    for c, curve in sorted(report.per_class.items()):
        echo(f"class {c}: AP={curve.ap:.4f} (gt={curve.num_gt}, tp={curve.num_tp}, fp={curve.num_fp})")
    echo(f"mAP={report.mean_ap:.4f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('nms', help='подавление немаксимумов')
    parser.add_argument('--detections', required=True, help='CSV детекций')
    parser.add_argument('--out', required=True, help='CSV оставшихся детекций')
    parser.add_argument('--iou', type=float, default=0.3, help='порог IoU (подавляются IoU > порога)')
    parser.set_defaults(handler=cmd_nms)

    parser = subparsers.add_parser('eval', help='AP по классам и mAP')
    parser.add_argument('--detections', required=True, help='CSV детекций')
    parser.add_argument('--gt', required=True, help='CSV разметки')
    parser.add_argument('--out', required=True, help='CSV отчёта class_id,ap,num_gt,num_tp,num_fp')
    parser.add_argument('--curves-dir', default=None, help='каталог для pr_class<k>.csv (по умолчанию рядом с отчётом)')
    parser.add_argument('--classes', type=int, default=None, help='число классов T')
    parser.add_argument('--match-iou', type=float, default=0.5, help='порог IoU сопоставления')
    parser.add_argument('--ap-mode', choices=AP_MODES, default='eleven_point', help='способ вычисления AP')
    parser.set_defaults(handler=cmd_eval)
