"""
Централизованная система логирования и метрик стадий конвейера.
"""

import json
import logging
import logging.handlers
import os
import sys
import threading
import time
import traceback
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional

ROOT_LOGGER = 'feat_edit'
SLOW_STAGE_MS = 5000.0

_EXTRA_FIELDS = ('stage', 'sample_index', 'class_id', 'duration_ms', 'error_type', 'stack_trace')


class JsonFormatter(logging.Formatter):
    """Форматтер для JSON-логов (одна запись — одна строка)."""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            'timestamp': datetime.fromtimestamp(record.created, tz=timezone.utc).isoformat(),
            'level': record.levelname,
            'logger': record.name,
            'message': record.getMessage(),
            'module': record.module,
            'function': record.funcName,
            'line': record.lineno,
        }

        for name in _EXTRA_FIELDS:
            if hasattr(record, name):
                log_data[name] = getattr(record, name)

        if record.exc_info and record.exc_info[0] is not None:
            log_data['exception'] = {
                'type': record.exc_info[0].__name__,
                'message': str(record.exc_info[1]),
                'traceback': traceback.format_exception(*record.exc_info),
            }

        return json.dumps(log_data, ensure_ascii=False, default=str)


class PipelineLogger:
    """Менеджер логирования конвейера: консоль сразу, файлы — после configure()."""

    def __init__(self):
        self.logs_dir: Optional[Path] = None
        self._file_handlers: list = []

        self._metrics: Dict[str, Any] = {
            'stages_completed': 0,
            'errors_count': 0,
            'stage_timing': {},
            'last_activity': time.time(),
        }
        self._metrics_lock = threading.Lock()
        self._start_time = time.time()

        self._setup_console()

    def _setup_console(self):
        """Настраивает корневой логгер пакета и консольный вывод."""
        self.main_logger = logging.getLogger(ROOT_LOGGER)
        self.main_logger.setLevel(logging.DEBUG)
        self.main_logger.propagate = False
        self.main_logger.handlers.clear()

        # Консоль пишет в stderr: stdout занят выводом подкоманд
        console_handler = logging.StreamHandler(sys.stderr)
        console_handler.setLevel(_level_from_env(logging.WARNING))
        console_handler.setFormatter(logging.Formatter(
            '%(asctime)s | %(levelname)-8s | %(name)-20s | %(message)s',
            datefmt='%Y-%m-%d %H:%M:%S',
        ))
        self.console_handler = console_handler
        self.main_logger.addHandler(console_handler)

    def configure(self, logs_dir: Optional[Path] = None, level: Optional[int] = None) -> Path:
        """
        Подключает файловые обработчики в каталоге логов.

        Args:
            logs_dir: каталог; по умолчанию FEAT_EDIT_LOG_DIR или logs/
            level: уровень консоли; по умолчанию FEAT_EDIT_LOG_LEVEL

        Returns:
            Каталог, куда пишутся логи
        """
        target = Path(logs_dir or os.getenv('FEAT_EDIT_LOG_DIR', 'logs'))
        target.mkdir(parents=True, exist_ok=True)
        self.close_files()

        if level is not None:
            self.console_handler.setLevel(level)

        # JSON handler для структурированных логов
        json_handler = logging.handlers.RotatingFileHandler(
            target / 'pipeline.jsonl', maxBytes=10 * 1024 * 1024, backupCount=5, encoding='utf-8'
        )
        json_handler.setLevel(logging.DEBUG)
        json_handler.setFormatter(JsonFormatter())

        # Только ошибки
        error_handler = logging.handlers.RotatingFileHandler(
            target / 'errors.jsonl', maxBytes=10 * 1024 * 1024, backupCount=5, encoding='utf-8'
        )
        error_handler.setLevel(logging.ERROR)
        error_handler.setFormatter(JsonFormatter())

        for handler in (json_handler, error_handler):
            self.main_logger.addHandler(handler)
            self._file_handlers.append(handler)

        self.logs_dir = target
        self.main_logger.debug(f"🔧 Логи пишутся в {target}")
        return target

    def close_files(self):
        """Отключает и закрывает файловые обработчики."""
        for handler in self._file_handlers:
            self.main_logger.removeHandler(handler)
            handler.close()
        self._file_handlers.clear()
        self.logs_dir = None

    def get_logger(self, name: str) -> logging.Logger:
        """Возвращает логгер с указанным именем."""
        return logging.getLogger(f'{ROOT_LOGGER}.{name}')

    def log_error(self, error: BaseException, context: Optional[Dict[str, Any]] = None):
        """Логирует ошибку с контекстом."""
        with self._metrics_lock:
            self._metrics['errors_count'] += 1

        extra_data: Dict[str, Any] = {
            'error_type': type(error).__name__,
            'stack_trace': ''.join(traceback.format_exception(type(error), error, error.__traceback__)),
        }
        for key in ('stage', 'sample_index', 'class_id', 'duration_ms'):
            if context and key in context:
                extra_data[key] = context[key]

        details = ''
        if context:
            rest = {k: v for k, v in context.items() if k not in extra_data}
            if rest:
                details = ' ' + ', '.join(f"{k}={v}" for k, v in sorted(rest.items()))

        self.get_logger('errors').error(f"❌ Ошибка: {error}{details}", extra=extra_data)

    def log_stage_timing(self, stage: str, duration_ms: float):
        """Записывает время стадии; медленные стадии — предупреждением."""
        with self._metrics_lock:
            timings = self._metrics['stage_timing'].setdefault(stage, [])
            timings.append(duration_ms)
            # Оставляем только последние 100 измерений
            if len(timings) > 100:
                self._metrics['stage_timing'][stage] = timings[-100:]
            self._metrics['stages_completed'] += 1
            self._metrics['last_activity'] = time.time()

        logger = self.get_logger('performance')
        if duration_ms > SLOW_STAGE_MS:
            logger.warning(
                f"⏱️ Медленная стадия: {stage} ({duration_ms:.2f}ms)",
                extra={'stage': stage, 'duration_ms': duration_ms},
            )
        else:
            logger.debug(f"⏱️ {stage}: {duration_ms:.2f}ms", extra={'stage': stage, 'duration_ms': duration_ms})

    def get_metrics(self) -> Dict[str, Any]:
        """Возвращает текущие метрики."""
        with self._metrics_lock:
            stage_perf = {}
            for stage, timings in self._metrics['stage_timing'].items():
                if timings:
                    stage_perf[stage] = {
                        'avg_ms': sum(timings) / len(timings),
                        'max_ms': max(timings),
                        'min_ms': min(timings),
                        'count': len(timings),
                    }

            return {
                'stages_completed': self._metrics['stages_completed'],
                'errors_count': self._metrics['errors_count'],
                'last_activity': self._metrics['last_activity'],
                'stage_performance': stage_perf,
                'uptime_seconds': time.time() - self._start_time,
            }

    def reset_metrics(self):
        """Сбрасывает счетчики метрик."""
        with self._metrics_lock:
            self._metrics['stages_completed'] = 0
            self._metrics['errors_count'] = 0
            self._metrics['stage_timing'].clear()


def _level_from_env(default: int) -> int:
    name = os.getenv('FEAT_EDIT_LOG_LEVEL', '').strip().upper()
    if not name:
        return default
    level = logging.getLevelName(name)
    return level if isinstance(level, int) else default


# Глобальный экземпляр логгера
pipeline_logger = PipelineLogger()


# Удобные функции для использования в других модулях
def get_logger(name: str) -> logging.Logger:
    """Возвращает логгер для указанного модуля."""
    return pipeline_logger.get_logger(name)


def configure_logging(logs_dir: Optional[Path] = None, level: Optional[int] = None) -> Path:
    """Включает запись логов в файлы."""
    return pipeline_logger.configure(logs_dir, level)


def log_error(error: BaseException, context: Optional[Dict[str, Any]] = None):
    """Логирует ошибку."""
    pipeline_logger.log_error(error, context)


def log_stage_timing(stage: str, duration_ms: float):
    """Логирует время выполнения стадии."""
    pipeline_logger.log_stage_timing(stage, duration_ms)


def get_metrics() -> Dict[str, Any]:
    """Возвращает метрики."""
    return pipeline_logger.get_metrics()


def close_logging():
    """Отключает файловые логи."""
    pipeline_logger.close_files()


def set_console_level(level: int):
    """Уровень консольного вывода."""
    pipeline_logger.console_handler.setLevel(level)
