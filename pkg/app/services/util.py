"""
Утилиты для записи артефактов и парсинга аргументов.
"""

import csv
import hashlib
import io
import json
import os
from pathlib import Path
from typing import Any, Iterable, Sequence, Union

import numpy as np

from ..errors import IoError

PathLike = Union[str, Path]


def atomic_write(file_path: PathLike, data: Union[bytes, str]) -> None:
    """
    Атомарная запись через временный файл.

    Args:
        file_path: Путь к целевому файлу
        data: байты или текст (UTF-8, переводы строк как есть)
    """
    path = Path(file_path)
    tmp_path = path.with_name(path.name + '.tmp')
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = data.encode('utf-8') if isinstance(data, str) else data
        with open(tmp_path, 'wb') as f:
            f.write(payload)
        os.replace(tmp_path, path)
    except OSError as e:
        # Удаляем временный файл в случае ошибки
        if tmp_path.exists():
            tmp_path.unlink()
        raise IoError(f"не удалось записать {path}: {e}") from e


def atomic_write_json(file_path: PathLike, data: Any) -> None:
    """Атомарная запись JSON (ключи отсортированы, отступ 2)."""
    atomic_write(file_path, json.dumps(data, ensure_ascii=False, indent=2, sort_keys=True) + '\n')


def format_float(value: float) -> str:
    """Полная точность: 17 значащих цифр."""
    return format(float(value), '.17g')


def csv_text(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """CSV с заголовком, разделитель ',', переводы строк '\\n'; float — через format_float."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buffer.getvalue()


def sha256_file(file_path: PathLike) -> str:
    """SHA-256 содержимого файла."""
    digest = hashlib.sha256()
    with open(file_path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


def parse_int_list(value: str) -> list[int]:
    """
    Парсит строку с числами через запятую в список int.

    Args:
        value: Строка вида "0,3,17"

    Returns:
        Список чисел
    """
    if not value.strip():
        return []
    return [int(x.strip()) for x in value.split(',') if x.strip()]
