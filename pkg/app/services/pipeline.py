"""
Конвейер эксперимента: статистики → профиль → маски → редактирование → слияние →
SVM и регрессоры → оценка теста → регрессия рамок → NMS → AP.

Каждая стадия пишет свой артефакт в каталог вывода; manifest.json фиксирует seed'ы,
хэш конфигурации и контрольные суммы всех файлов.
"""

import platform
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import jinja2
import numpy as np

from ..config import RunConfig, config_hash
from ..errors import ShapeError, StageError
from ..types import BoxRegressor, ClassSummary, Dataset, EditMask, GroundTruthRecord, LinearModel, StageStatus
from .channel_stats import rank_channel_activations, stats_matrix, write_stats_csv
from .detection_eval import evaluate, nms_all, write_eval_csv, write_pr_curves
from .edit_engine import (
    build_masks, describe_masks, edit_dataset, edit_for_classifier, merge_datasets, random_edit_dataset,
    variance_profile, write_masks_csv,
)
from .feature_store import read_dataset, read_ground_truth, write_dataset, write_detections
from .linear_models import (
    classify, predict_detections, regression_pairs, train_regressor, train_svm, write_model_bank,
)
from .logger import close_logging, configure_logging, get_logger, log_error, log_stage_timing
from .run_lock import OutputLock
from .synth import read_roles, recovery
from .util import PathLike, atomic_write, atomic_write_json, csv_text, sha256_file

logger = get_logger('pipeline')

STAGES = ('load', 'stats', 'profile', 'masks', 'edit', 'merge', 'train', 'score', 'regress', 'nms', 'ap', 'report')
DROPS_HEADER = ('class_id', 'channel', 'reason', 'rank', 'sample_index')
TEMPLATES_DIR = Path(__file__).resolve().parent.parent / 'templates'
REPORT_TEMPLATE = 'report.md.j2'


def export_drops(masks: Sequence[EditMask], dataset: Dataset, out: PathLike, k: int = 9) -> int:
    """
    CSV отброшенных каналов: причина и k лучших выборок по активации в центре канала.

    Возвращает число строк данных.
    """
    rows = []
    for mask in sorted(masks, key=lambda m: m.class_id):
        for channel in mask.dropped:
            for rank, index in enumerate(rank_channel_activations(dataset, channel, k)):
                rows.append((mask.class_id, channel, mask.reason(channel), rank, index))
    atomic_write(out, csv_text(DROPS_HEADER, rows))
    logger.info(f"🖼️ Экспорт отброшенных каналов: {len(rows)} строк → {out}")
    return len(rows)


def render_report(report: Dict[str, Any]) -> str:
    """Markdown-отчёт из шаблона app/templates/report.md.j2."""
    env = jinja2.Environment(
        loader=jinja2.FileSystemLoader(str(TEMPLATES_DIR)),
        undefined=jinja2.StrictUndefined,
        keep_trailing_newline=True,
        autoescape=False,
    )
    env.filters['num'] = lambda v, digits=4: '—' if v is None else f"{float(v):.{digits}f}"
    return env.get_template(REPORT_TEMPLATE).render(report=report)


@dataclass
class _RunState:
    train: Optional[Dataset] = None
    test: Optional[Dataset] = None
    train_gt: List[GroundTruthRecord] = field(default_factory=list)
    test_gt: List[GroundTruthRecord] = field(default_factory=list)
    masks: List[EditMask] = field(default_factory=list)
    summaries: Dict[int, ClassSummary] = field(default_factory=dict)
    training_sets: Dict[int, Dataset] = field(default_factory=dict)
    models: List[LinearModel] = field(default_factory=list)
    regressors: Dict[int, BoxRegressor] = field(default_factory=dict)
    regression_pairs: Dict[int, int] = field(default_factory=dict)


class PipelineRun:
    """Один запуск конвейера по RunConfig."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = Path(cfg.output)
        self.status: Dict[str, StageStatus] = {}
        self.timings: Dict[str, float] = {}
        self.written: List[Path] = []
        self.state = _RunState()

    # --- служебное ---------------------------------------------------------------

    @contextmanager
    def _stage(self, name: str, **context: Any) -> Iterator[Dict[str, Any]]:
        """Замер времени стадии; любая ошибка оборачивается в StageError с контекстом."""
        start = time.perf_counter()
        try:
            yield context
        except StageError:
            raise
        except Exception as e:
            for attr in ('sample_index', 'line'):
                if getattr(e, attr, None) is not None:
                    context[attr] = getattr(e, attr)
            log_error(e, {'stage': name, **context})
            raise StageError(name, e, context) from e
        duration_ms = (time.perf_counter() - start) * 1000.0
        self.status[name] = 'done'
        self.timings[name] = duration_ms
        log_stage_timing(name, duration_ms)

    def _skip(self, *names: str) -> None:
        for name in names:
            self.status[name] = 'skipped'
            logger.info(f"⏭️ Стадия '{name}' пропущена для варианта {self.cfg.variant}", extra={'stage': name})

    def _path(self, name: str) -> Path:
        path = self.out / name
        self.written.append(path)
        return path

    # --- стадии ------------------------------------------------------------------

    def _load(self) -> None:
        cfg, st = self.cfg, self.state
        with self._stage('load') as ctx:
            ctx['path'] = str(cfg.train)
            st.train = read_dataset(cfg.train)
            ctx['path'] = str(cfg.test)
            st.test = read_dataset(cfg.test)
            ctx['path'] = str(cfg.train_gt)
            st.train_gt = read_ground_truth(cfg.train_gt)
            ctx['path'] = str(cfg.test_gt)
            st.test_gt = read_ground_truth(cfg.test_gt)
            ctx.pop('path')
            if st.train.geometry != st.test.geometry:
                raise ShapeError(f"геометрия train {st.train.geometry} ≠ test {st.test.geometry}")
        logger.info(f"📂 Загружено: train {len(st.train)}, test {len(st.test)} выборок")

    def _edit_stages(self) -> Dict[int, Dataset]:
        """Маски и редактированные наборы для каждого классификатора."""
        cfg, st = self.cfg, self.state
        train = st.train
        assert train is not None
        classes = range(train.num_classes)

        with self._stage('stats'):
            stats = stats_matrix(train)
            write_stats_csv(stats, self._path('stats.csv'))
        with self._stage('profile'):
            profile = variance_profile(stats, train.class_ids, train.num_classes)
        with self._stage('masks'):
            st.masks = build_masks(profile, cfg.edit)
            st.summaries = describe_masks(profile, st.masks)
            write_masks_csv(st.masks, self._path('masks.csv'))
            export_drops(st.masks, train, self._path('drops.csv'))
        with self._stage('edit'):
            write_dataset(edit_dataset(train, st.masks), self._path('train_edited.feat'))
            edited = {c: edit_for_classifier(train, st.masks, c, cfg.negative_edit) for c in classes}
        return edited

    def _training_sets(self) -> None:
        cfg, st = self.cfg, self.state
        train = st.train
        assert train is not None
        classes = range(train.num_classes)

        if cfg.variant == 'original':
            self._skip('stats', 'profile', 'masks', 'edit', 'merge')
            st.training_sets = {c: train for c in classes}
            return

        if cfg.variant == 'random_edit':
            self._skip('stats', 'profile', 'masks')
            with self._stage('edit'):
                randomized = random_edit_dataset(train, cfg.random_drop_ratio, cfg.edit.seed)
                write_dataset(randomized, self._path('train_random.feat'))
            with self._stage('merge'):
                merged = merge_datasets(train, randomized)
            st.training_sets = {c: merged for c in classes}
            return

        edited = self._edit_stages()
        if cfg.variant == 'edited_only':
            self._skip('merge')
            st.training_sets = edited
            return
        with self._stage('merge'):
            st.training_sets = {c: merge_datasets(train, edited[c]) for c in classes}

    def _train(self) -> None:
        cfg, st = self.cfg, self.state
        with self._stage('train') as ctx:
            for c, data in sorted(st.training_sets.items()):
                ctx['class_id'] = c
                st.models.append(train_svm(data, c, cfg.svm))
                indices, targets = regression_pairs(data, st.train_gt, c, cfg.regression_iou)
                st.regression_pairs[c] = int(indices.size)
                if indices.size == 0:
                    logger.warning(f"⚠️ Класс {c}: нет предложений с IoU ≥ {cfg.regression_iou}, регрессор не обучен",
                                   extra={'class_id': c})
                    continue
                st.regressors[c] = train_regressor(data.flattened()[indices], targets, cfg.ridge_lambda, c)
            ctx.pop('class_id', None)
            for path in write_model_bank(self.out / 'models', st.models, st.regressors):
                self.written.append(path)

    def _evaluate(self) -> Dict[str, Any]:
        cfg, st = self.cfg, self.state
        test = st.test
        assert test is not None
        with self._stage('score'):
            predicted = classify(st.models, test.flattened())
            accuracy = float(np.mean(predicted == test.class_ids)) if len(test) else 0.0
            atomic_write(self._path('predictions.csv'), csv_text(
                ('sample_index', 'class_id', 'predicted'),
                ((j, int(test.class_ids[j]), int(predicted[j])) for j in range(len(test))),
            ))
        with self._stage('regress'):
            detections = predict_detections(test, st.models, st.regressors)
            write_detections(detections, self._path('detections.csv'))
        with self._stage('nms'):
            kept = nms_all(detections, cfg.eval.nms_iou)
            write_detections(kept, self._path('detections_nms.csv'))
        with self._stage('ap'):
            report = evaluate(kept, st.test_gt, cfg.eval, test.num_classes)
            write_eval_csv(report, self._path('eval.csv'))
            self.written.extend(write_pr_curves(report, self.out))
        return {'accuracy': accuracy, 'report': report}

    def _build_report(self, evaluation: Dict[str, Any]) -> Dict[str, Any]:
        cfg, st = self.cfg, self.state
        eval_report = evaluation['report']
        classes = []
        for c, curve in sorted(eval_report.per_class.items()):
            row = ClassSummary(class_id=c, ap=curve.ap, num_gt=curve.num_gt, num_tp=curve.num_tp,
                               num_fp=curve.num_fp)
            row.update({k: v for k, v in st.summaries.get(c, {}).items() if k != 'class_id'})  # type: ignore[typeddict-item]
            row['training_samples'] = len(st.training_sets[c])  # type: ignore[typeddict-unknown-key]
            row['regression_pairs'] = st.regression_pairs.get(c, 0)  # type: ignore[typeddict-unknown-key]
            classes.append(row)

        recovered = None
        if cfg.roles is not None and st.masks:
            recovered = recovery(st.masks, read_roles(cfg.roles))

        return {
            'variant': cfg.variant,
            'seed': cfg.seed,
            'config_hash': config_hash(cfg),
            'config': cfg.to_dict(),
            'stages': [{'name': name, 'status': self.status.get(name, 'skipped')} for name in STAGES],
            'train_samples': len(st.train) if st.train is not None else 0,
            'test_samples': len(st.test) if st.test is not None else 0,
            'mean_ap': eval_report.mean_ap,
            'accuracy': evaluation['accuracy'],
            'classes': classes,
            'recovery': recovered,
        }

    def _write_manifest(self, started: datetime) -> Path:
        cfg = self.cfg
        inputs = {
            name: {'path': str(path), 'sha256': sha256_file(path)}
            for name, path in (('train', cfg.train), ('test', cfg.test), ('train_gt', cfg.train_gt),
                               ('test_gt', cfg.test_gt), ('roles', cfg.roles))
            if path is not None
        }
        files = {
            str(path.relative_to(self.out)): sha256_file(path)
            for path in sorted(set(self.written)) if path.exists()
        }
        manifest = {
            'config': cfg.to_dict(),
            'config_hash': config_hash(cfg),
            'seeds': {'run': cfg.seed, 'edit': cfg.edit.seed, 'svm': cfg.svm.seed},
            'inputs': inputs,
            'files': files,
            'stage_timings_ms': self.timings,
            'started_at': started.isoformat(),
            'finished_at': datetime.now(timezone.utc).isoformat(),
            'python': platform.python_version(),
            'numpy': np.__version__,
        }
        path = self.out / 'manifest.json'
        atomic_write_json(path, manifest)
        return path

    def run(self) -> Dict[str, Any]:
        started = datetime.now(timezone.utc)
        logger.info(f"🚀 Запуск варианта {self.cfg.variant} (seed={self.cfg.seed}) → {self.out}")
        self._load()
        self._training_sets()
        self._train()
        evaluation = self._evaluate()
        with self._stage('report'):
            # Статус стадии report в самом отчёте известен заранее
            self.status['report'] = 'done'
            report = self._build_report(evaluation)
            atomic_write_json(self._path('report.json'), report)
            atomic_write(self._path('report.md'), render_report(report))
        self._write_manifest(started)
        logger.info(f"✅ Готово: mAP={report['mean_ap']:.4f}, accuracy={report['accuracy']:.4f}")
        return report


def run_pipeline(cfg: RunConfig) -> Dict[str, Any]:
    """Полный запуск с блокировкой каталога вывода и логами в <output>/logs."""
    out = Path(cfg.output)
    with OutputLock(out):
        configure_logging(out / 'logs')
        try:
            return PipelineRun(cfg).run()
        finally:
            close_logging()
