"""
Unit-тесты для модуля run_lock.
"""

import os

import pytest

from app.errors import LockError
from app.services.run_lock import LOCK_NAME, OutputLock


class TestOutputLock:
    """Тесты для OutputLock."""

    def test_acquire_and_release(self, tmp_path):
        lock = OutputLock(tmp_path / 'out')
        lock.acquire()
        assert lock.owner() == os.getpid()
        lock.release()
        assert not (tmp_path / 'out' / LOCK_NAME).exists()

    def test_context_manager(self, tmp_path):
        with OutputLock(tmp_path) as lock:
            assert lock.lock_file.exists()
        assert not lock.lock_file.exists()

    def test_release_without_acquire(self, tmp_path):
        OutputLock(tmp_path).release()

    def test_stale_lock_is_removed(self, tmp_path, monkeypatch):
        (tmp_path / LOCK_NAME).write_text('999999\n0\n', encoding='utf-8')
        monkeypatch.setattr(OutputLock, 'is_process_running', staticmethod(lambda pid: False))
        with OutputLock(tmp_path) as lock:
            assert lock.owner() == os.getpid()

    def test_live_foreign_lock(self, tmp_path, monkeypatch):
        (tmp_path / LOCK_NAME).write_text('999999\n0\n', encoding='utf-8')
        monkeypatch.setattr(OutputLock, 'is_process_running', staticmethod(lambda pid: True))
        with pytest.raises(LockError):
            OutputLock(tmp_path).acquire()
        # Чужой файл не тронут
        assert OutputLock(tmp_path).owner() == 999999

    def test_corrupt_lock_file(self, tmp_path):
        (tmp_path / LOCK_NAME).write_text('garbage', encoding='utf-8')
        lock = OutputLock(tmp_path)
        assert lock.owner() is None
        with lock:
            assert lock.owner() == os.getpid()

    def test_own_leftover_lock(self, tmp_path):
        (tmp_path / LOCK_NAME).write_text(f'{os.getpid()}\n0\n', encoding='utf-8')
        with OutputLock(tmp_path) as lock:
            assert lock.owner() == os.getpid()

    def test_current_process_is_running(self):
        assert OutputLock.is_process_running(os.getpid())
