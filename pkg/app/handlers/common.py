"""
Общие части обработчиков подкоманд.
"""

import argparse
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, Optional

from ..config import resolve_seed
from ..services.run_lock import OutputLock


def add_seed(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--seed', type=int, default=None,
                        help='seed (по умолчанию FEAT_EDIT_SEED или 0)')


def seed_of(args: argparse.Namespace, configured: Optional[int] = None) -> int:
    return resolve_seed(getattr(args, 'seed', None), configured)


@contextmanager
def locked_output(path: Path, is_dir: bool = False) -> Iterator[Path]:
    """Блокирует каталог вывода (или каталог файла) на время записи."""
    directory = Path(path) if is_dir else Path(path).parent
    with OutputLock(directory):
        yield Path(path)


def echo(text: str) -> None:
    """Результат подкоманды — в stdout, логи — в stderr."""
    print(text, flush=True)
