"""
Разбор аргументов командной строки и диспетчеризация подкоманд.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from .config import LOG_DIR_ENV, load_environment
from .handlers import edit, evaluate, run, stats, synth, train
from .middlewares.error_handler import ErrorHandlerMiddleware
from .services.logger import configure_logging, set_console_level

# Порядок подкоманд в --help
HANDLERS = (synth, stats, edit, train, evaluate, run)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='feat-edit',
        description=(
            'Редактирование признаков pool5 по дисперсиям эксцесса каналов и обучение '
            'линейных детекторов. Коды выхода: 0 — успех, 2 — конфигурация, 3 — данные, 4 — численная ошибка.'
        ),
    )
    parser.add_argument('--log-dir', default=None,
                        help=f'каталог файловых логов (по умолчанию {LOG_DIR_ENV}; без него — только консоль)')
    parser.add_argument('--verbose', '-v', action='store_true', help='подробный вывод в консоль')
    subparsers = parser.add_subparsers(dest='command', metavar='COMMAND')
    subparsers.required = True
    for module in HANDLERS:
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Точка входа CLI; возвращает код выхода."""
    load_environment()
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.verbose:
        set_console_level(logging.DEBUG)
    log_dir = args.log_dir or os.getenv(LOG_DIR_ENV)
    if log_dir:
        configure_logging(log_dir)

    return ErrorHandlerMiddleware()(args.handler, args)


if __name__ == '__main__':
    sys.exit(main())
