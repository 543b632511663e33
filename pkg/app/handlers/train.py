"""
Подкоманды train и predict.
"""

import argparse
from pathlib import Path

from ..config import SvmConfig
from ..services.feature_store import read_dataset, read_ground_truth, write_detections
from ..services.linear_models import (
    predict_detections, read_model_bank, regression_pairs, train_regressor, train_svm, write_model_bank,
)
from ..services.logger import get_logger
from ..services.util import parse_int_list
from .common import add_seed, echo, locked_output, seed_of

logger = get_logger('handlers.train')


def cmd_train(args: argparse.Namespace) -> int:
    """Один-против-всех SVM (и регрессоры рамок при --gt) для выбранных классов."""
    dataset = read_dataset(args.data)
    cfg = SvmConfig(
        reg_lambda=args.reg_lambda, epochs=args.epochs, seed=seed_of(args), tolerance=args.tolerance,
        positive_weight=args.positive_weight,
    )
    classes = parse_int_list(args.classes) if args.classes else list(range(dataset.num_classes))
    gts = read_ground_truth(args.gt) if args.gt else []

    models, regressors = [], {}
    for c in classes:
        models.append(train_svm(dataset, c, cfg))
        if not gts:
            continue
        indices, targets = regression_pairs(dataset, gts, c, args.regression_iou)
        if indices.size:
            regressors[c] = train_regressor(dataset.flattened()[indices], targets, args.ridge_lambda, c)
        else:
            logger.warning(f"⚠️ Класс {c}: нет пар для регрессора", extra={'class_id': c})

    with locked_output(Path(args.out), is_dir=True):
        paths = write_model_bank(args.out, models, regressors)
    echo(f"моделей: {len(models)}, регрессоров: {len(regressors)}, файлов: {len(paths)} → {args.out}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    """Детекции: по одной на выборку и класс, рамка уточнена регрессором класса."""
    dataset = read_dataset(args.data)
    models, regressors = read_model_bank(args.models)
    detections = predict_detections(dataset, models, None if args.no_regress else regressors)
    with locked_output(args.out):
        write_detections(detections, args.out)
    echo(f"{len(detections)} детекций → {args.out}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('train', help='обучение SVM и регрессоров рамок')
    parser.add_argument('--data', required=True, help='обучающий .feat')
    parser.add_argument('--out', required=True, help='каталог моделей')
    parser.add_argument('--gt', default=None, help='CSV разметки: обучить и регрессоры рамок')
    parser.add_argument('--classes', default=None, help='классы через запятую (по умолчанию все)')
    parser.add_argument('--reg-lambda', type=float, default=1e-4, help='λ регуляризации SVM')
    parser.add_argument('--epochs', type=int, default=50, help='эпох SVM')
    parser.add_argument('--tolerance', type=float, default=1e-6, help='относительная точность останова')
    parser.add_argument('--positive-weight', type=float, default=1.0, help='вес положительных выборок')
    parser.add_argument('--ridge-lambda', type=float, default=1e-3, help='λ гребневой регрессии')
    parser.add_argument('--regression-iou', type=float, default=0.6, help='минимальный IoU пары для регрессора')
    add_seed(parser)
    parser.set_defaults(handler=cmd_train)

    parser = subparsers.add_parser('predict', help='оценки SVM и рамки для набора')
    parser.add_argument('--data', required=True, help='.feat для оценки')
    parser.add_argument('--models', required=True, help='каталог моделей')
    parser.add_argument('--out', required=True, help='CSV детекций')
    parser.add_argument('--no-regress', action='store_true', help='не применять регрессоры рамок')
    parser.set_defaults(handler=cmd_predict)
