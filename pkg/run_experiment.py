#!/usr/bin/env python3
"""
Серия запусков конвейера по многим seed'ам на синтетических данных.

Для каждого seed генерируется набор с заложенными ролями каналов, затем запускаются
выбранные варианты обучения; итог — summary.csv и summary.json со средними mAP/точностью,
парным приростом merged над original и восстановлением заложенных каналов.
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Dict, List

from app.config import VARIANTS, build_run_config, load_environment, parse_overrides
from app.errors import FeatEditError
from app.services.feature_store import write_dataset, write_ground_truth
from app.services.logger import configure_logging, get_logger
from app.services.pipeline import run_pipeline
from app.services.synth import SynthSpec, generate, write_roles
from app.services.util import atomic_write, atomic_write_json, csv_text

logger = get_logger('experiment')

SUMMARY_HEADER = ('variant', 'runs', 'mean_map', 'mean_accuracy', 'noisy_recall', 'flat_recall', 'friendly_dropped')


def _mean(values: List[float]) -> float:
    values = [v for v in values if v is not None and not math.isnan(v)]
    return math.fsum(values) / len(values) if values else float('nan')


class ExperimentRunner:
    """Прогон вариантов по seed'ам с общей синтетикой на каждый seed."""

    def __init__(self, out: Path, seeds: List[int], variants: List[str], per_class: int, shift: float,
                 overrides: Dict[str, str]):
        self.out = out
        self.seeds = seeds
        self.variants = variants
        self.per_class = per_class
        self.shift = shift
        self.overrides = overrides
        self.results: Dict[str, Dict[int, dict]] = {v: {} for v in variants}

    def check_dependencies(self) -> bool:
        """Проверка зависимостей."""
        missing = []
        for module in ('numpy', 'dotenv', 'psutil', 'jinja2'):
            try:
                __import__(module)
            except ImportError:
                missing.append(module)
        if missing:
            logger.error(f"❌ Не найдены модули: {', '.join(missing)}; выполните pip install -r requirements.txt")
            return False
        return True

    def prepare_data(self, seed: int) -> Dict[str, Path]:
        data_dir = self.out / f'seed_{seed}' / 'data'
        spec = SynthSpec.planted(seed=seed, n_per_class=self.per_class, shift=self.shift)
        result = generate(spec)
        paths = {
            'train': data_dir / 'train.feat', 'test': data_dir / 'test.feat',
            'train_gt': data_dir / 'train_gt.csv', 'test_gt': data_dir / 'test_gt.csv',
            'roles': data_dir / 'roles.json',
        }
        write_dataset(result.train, paths['train'])
        write_dataset(result.test, paths['test'])
        write_ground_truth(result.train_gt, paths['train_gt'])
        write_ground_truth(result.test_gt, paths['test_gt'])
        write_roles(result.roles, paths['roles'])
        return paths

    def run_seed(self, seed: int) -> None:
        paths = self.prepare_data(seed)
        for variant in self.variants:
            values = {key: str(path) for key, path in paths.items()}
            values.update(self.overrides)
            values['variant'] = variant
            values['output'] = str(self.out / f'seed_{seed}' / variant)
            report = run_pipeline(build_run_config(values, seed=seed))
            self.results[variant][seed] = report
            logger.info(f"🌱 seed={seed} {variant}: mAP={report['mean_ap']:.4f}, accuracy={report['accuracy']:.4f}")

    def summarize(self) -> dict:
        rows = []
        for variant in self.variants:
            reports = list(self.results[variant].values())
            recovery = [r['recovery'] for r in reports if r.get('recovery')]
            rows.append({
                'variant': variant,
                'runs': len(reports),
                'mean_map': _mean([r['mean_ap'] for r in reports]),
                'mean_accuracy': _mean([r['accuracy'] for r in reports]),
                'noisy_recall': _mean([r['noisy_recall'] for r in recovery]),
                'flat_recall': _mean([r['flat_recall'] for r in recovery]),
                'friendly_dropped': _mean([r['friendly_dropped'] for r in recovery]),
            })

        summary = {'seeds': self.seeds, 'variants': rows}
        if 'original' in self.variants and 'merged' in self.variants:
            paired = [
                self.results['merged'][s]['accuracy'] - self.results['original'][s]['accuracy']
                for s in self.seeds if s in self.results['merged'] and s in self.results['original']
            ]
            summary['merged_minus_original_accuracy'] = _mean(paired)

        atomic_write_json(self.out / 'summary.json', summary)
        atomic_write(self.out / 'summary.csv', csv_text(SUMMARY_HEADER, ([row[k] for k in SUMMARY_HEADER] for row in rows)))
        return summary

    def run(self) -> bool:
        if not self.check_dependencies():
            return False
        for seed in self.seeds:
            self.run_seed(seed)
        summary = self.summarize()
        for row in summary['variants']:
            logger.warning(
                f"📊 {row['variant']}: mAP={row['mean_map']:.4f}, accuracy={row['mean_accuracy']:.4f}, "
                f"noisy_recall={row['noisy_recall']:.3f}, flat_recall={row['flat_recall']:.3f}"
            )
        return True


def main() -> int:
    """Точка входа."""
    parser = argparse.ArgumentParser(description="Серия запусков конвейера по seed'ам на синтетических данных")
    parser.add_argument('--out', required=True, help='каталог результатов')
    parser.add_argument('--seeds', type=int, default=20, help='число seed: 0..N−1')
    parser.add_argument('--variants', default='original,merged',
                        help=f"варианты через запятую из {', '.join(VARIANTS)}")
    parser.add_argument('--per-class', type=int, default=200, help='обучающих выборок на класс')
    parser.add_argument('--shift', type=float, default=1.0, help='сдвиг noisy-каналов на тесте')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='переопределение ключа конфигурации run')
    parser.add_argument('--first-seed', type=int, default=0, help='первый seed серии')
    args = parser.parse_args()

    load_environment()
    out = Path(args.out)
    configure_logging(out / 'logs')
    variants = [v.strip() for v in args.variants.split(',') if v.strip()]
    overrides = parse_overrides(args.set)
    seeds = list(range(args.first_seed, args.first_seed + args.seeds))

    try:
        runner = ExperimentRunner(out, seeds, variants, args.per_class, args.shift, overrides)
        return 0 if runner.run() else 1
    except FeatEditError as e:
        logger.error(f"💥 {type(e).__name__}: {e}")
        return e.exit_code
    except KeyboardInterrupt:
        logger.info("⌨️ Получено прерывание с клавиатуры")
        return 130


if __name__ == '__main__':
    sys.exit(main())
