"""
Обёртка подкоманд CLI: замер времени, логирование ошибок и отображение их в коды выхода.
"""

import argparse
import sys
import time
from typing import Callable, Optional

from ..errors import FeatEditError
from ..services.logger import get_logger, log_error, log_stage_timing

logger = get_logger('middleware')

Handler = Callable[[argparse.Namespace], Optional[int]]

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_INTERRUPTED = 130


class ErrorHandlerMiddleware:
    """Вызывает обработчик подкоманды и превращает исключения в код выхода."""

    def __init__(self):
        self.error_count = 0

    def __call__(self, handler: Handler, args: argparse.Namespace) -> int:
        start_time = time.time()
        command = getattr(args, 'command', None) or getattr(handler, '__name__', 'unknown')
        logger.debug(f"▶️ Команда {command}")

        try:
            result = handler(args)
            duration_ms = (time.time() - start_time) * 1000
            log_stage_timing(f'cli.{command}', duration_ms)
            return int(result or EXIT_OK)

        except FeatEditError as e:
            self.error_count += 1
            context = {'stage': getattr(e, 'stage', command), 'command': command,
                       'exit_code': e.exit_code}
            for attr in ('sample_index', 'line'):
                value = getattr(e, attr, None) or getattr(getattr(e, 'cause', None), attr, None)
                if value is not None:
                    context[attr] = value
            log_error(e, context)
            print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
            return e.exit_code

        except KeyboardInterrupt:
            logger.warning(f"🔴 Команда {command} прервана")
            return EXIT_INTERRUPTED

        except Exception as e:
            # Неожиданная ошибка: полный traceback уходит в errors.jsonl
            self.error_count += 1
            log_error(e, {'stage': command, 'command': command, 'unexpected': True})
            print(f"❌ Непредвиденная ошибка {type(e).__name__}: {e}", file=sys.stderr)
            return EXIT_UNEXPECTED
