"""
Подкоманда run: полный эксперимент по файлу конфигурации.
"""

import argparse
from pathlib import Path

from ..config import NEGATIVE_EDIT_MODES, VARIANTS, load_run_config, parse_overrides
from ..services.pipeline import run_pipeline
from .common import add_seed, echo


def cmd_run(args: argparse.Namespace) -> int:
    """Читает key=value конфигурацию, применяет --set, --variant и --negative-edit, запускает конвейер."""
    overrides = parse_overrides(args.set)
    if args.variant:
        overrides['variant'] = args.variant
    if args.negative_edit:
        overrides['negative_edit'] = args.negative_edit
    if args.output:
        overrides['output'] = args.output
    cfg = load_run_config(Path(args.config) if args.config else None, overrides, seed=args.seed)
    report = run_pipeline(cfg)
    echo(f"variant={report['variant']} seed={report['seed']} mAP={report['mean_ap']:.4f} "
         f"accuracy={report['accuracy']:.4f}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('run', help='полный конвейер: маски → обучение → оценка')
    parser.add_argument('--config', default=None, help='файл key=value (формат .env)')
    parser.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                        help='переопределение ключа конфигурации (можно несколько раз)')
    parser.add_argument('--variant', choices=VARIANTS, default=None, help='вариант обучающего набора')
    parser.add_argument('--negative-edit', choices=NEGATIVE_EDIT_MODES, default=None,
                        help='какой маской редактировать негативы классификатора')
    parser.add_argument('--output', default=None, help='каталог вывода')
    add_seed(parser)
    parser.set_defaults(handler=cmd_run)
