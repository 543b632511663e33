"""
Блокировка каталога вывода: в один каталог одновременно пишет только один процесс.
"""

import os
import time
from pathlib import Path
from typing import Optional

import psutil

from ..errors import LockError
from .logger import get_logger
from .util import PathLike

logger = get_logger('run_lock')

LOCK_NAME = '.feat_edit.lock'


class OutputLock:
    """PID-файл `<каталог>/.feat_edit.lock`; чужой живой PID → LockError, мёртвый — удаляется."""

    def __init__(self, directory: PathLike):
        self.directory = Path(directory)
        self.lock_file = self.directory / LOCK_NAME
        self._locked = False
        self._current_pid = os.getpid()

    @staticmethod
    def is_process_running(pid: int) -> bool:
        """Жив ли процесс с указанным PID."""
        try:
            return psutil.Process(pid).is_running() and psutil.Process(pid).status() != psutil.STATUS_ZOMBIE
        except (psutil.NoSuchProcess, psutil.AccessDenied, psutil.ZombieProcess):
            return False

    def owner(self) -> Optional[int]:
        """PID владельца блокировки или None, если файла нет или он испорчен."""
        try:
            return int(self.lock_file.read_text(encoding='utf-8').split()[0])
        except (FileNotFoundError, ValueError, IndexError):
            return None

    def acquire(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        if self.lock_file.exists():
            pid = self.owner()
            if pid is not None and pid != self._current_pid and self.is_process_running(pid):
                raise LockError(f"каталог {self.directory} занят процессом PID {pid}")
            logger.info(f"🔓 Устаревшая блокировка (PID: {pid}) удалена: {self.lock_file}")
            self._cleanup()

        try:
            # O_EXCL: при гонке двух процессов файл создаст только один
            fd = os.open(self.lock_file, os.O_WRONLY | os.O_CREAT | os.O_EXCL, 0o644)
        except FileExistsError as e:
            raise LockError(f"каталог {self.directory} занят другим процессом") from e
        with os.fdopen(fd, 'w', encoding='utf-8') as f:
            f.write(f"{self._current_pid}\n{time.time()}\n")
        self._locked = True
        logger.debug(f"🔒 Блокировка получена (PID: {self._current_pid}): {self.lock_file}")

    def release(self) -> None:
        if not self._locked:
            return
        try:
            if self.owner() == self._current_pid:
                self.lock_file.unlink()
                logger.debug(f"✅ Блокировка освобождена: {self.lock_file}")
            else:
                logger.warning(f"Файл блокировки {self.lock_file} принадлежит другому процессу")
        except FileNotFoundError:
            pass
        finally:
            self._locked = False

    def _cleanup(self) -> None:
        try:
            self.lock_file.unlink()
        except FileNotFoundError:
            pass

    def __enter__(self) -> "OutputLock":
        self.acquire()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.release()
