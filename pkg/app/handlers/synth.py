"""
Подкоманда synth: синтетические наборы с заложенными ролями каналов.
"""

import argparse
from pathlib import Path

from ..services.feature_store import write_dataset, write_ground_truth
from ..services.logger import get_logger
from ..services.synth import SynthSpec, generate, write_roles
from ..services.util import atomic_write
from .common import add_seed, echo, locked_output, seed_of

logger = get_logger('handlers.synth')


def run_env_text(out: Path) -> str:
    """Заготовка файла конфигурации run для сгенерированных данных."""
    lines = [
        f"train={out / 'train.feat'}",
        f"test={out / 'test.feat'}",
        f"train_gt={out / 'train_gt.csv'}",
        f"test_gt={out / 'test_gt.csv'}",
        f"roles={out / 'roles.json'}",
        f"output={out / 'run'}",
    ]
    return '\n'.join(lines) + '\n'


def cmd_synth(args: argparse.Namespace) -> int:
    """Генерирует train/test .feat, разметку, roles.json и run.env."""
    spec = SynthSpec.planted(
        seed=seed_of(args), num_classes=args.classes, channels=args.channels,
        noisy_per_class=args.noisy, flat_count=args.flat, spatial=args.spatial,
        n_per_class=args.per_class, n_test_per_class=args.test_per_class, shift=args.shift,
        proposals_per_object=args.proposals,
    )
    out = Path(args.out)
    with locked_output(out, is_dir=True):
        result = generate(spec)
        write_dataset(result.train, out / 'train.feat')
        write_dataset(result.test, out / 'test.feat')
        write_ground_truth(result.train_gt, out / 'train_gt.csv')
        write_ground_truth(result.test_gt, out / 'test_gt.csv')
        write_roles(result.roles, out / 'roles.json')
        atomic_write(out / 'run.env', run_env_text(out))
    echo(f"train={len(result.train)} test={len(result.test)} → {out}")
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser('synth', help='синтетические карты признаков с заложенными ролями каналов')
    parser.add_argument('--out', required=True, help='каталог вывода')
    add_seed(parser)
    parser.add_argument('--classes', type=int, default=3, help='число классов T')
    parser.add_argument('--channels', type=int, default=32, help='число каналов C')
    parser.add_argument('--spatial', type=int, default=6, help='размер S карты S×S')
    parser.add_argument('--per-class', type=int, default=200, help='обучающих выборок на класс')
    parser.add_argument('--test-per-class', type=int, default=None, help='тестовых выборок на класс')
    parser.add_argument('--noisy', type=int, default=4, help='noisy-каналов на класс')
    parser.add_argument('--flat', type=int, default=10, help='flat-каналов (общих для всех классов)')
    parser.add_argument('--shift', type=float, default=1.0, help='сдвиг noisy-каналов на тесте, [0, 1]')
    parser.add_argument('--proposals', type=int, default=2, help='предложений на объект')
    parser.set_defaults(handler=cmd_synth)
