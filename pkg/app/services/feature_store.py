"""
Хранилище признаков: бинарный контейнер FEAT1 и CSV детекций/разметки.

Формат FEAT1 (все числа little-endian):
  заголовок 24 байта: b"FEAT1" + 1 байт выравнивания + u16 версия (=1) + u32 N, T, C, S
  запись выборки: u32 image_id, u32 class_id, u8 difficult, 4×f32 рамка, C·S·S×f32 значения
  значения — по каналам (канал, строка, столбец).

CSV детекций и разметки: первая строка обязательно заголовок с фиксированным порядком колонок.
"""

import csv
import io
import struct
from pathlib import Path
from typing import List, Sequence

import numpy as np

from ..errors import (
    FormatError, IoError, NonFiniteValueError, ParseError, ShapeError, TruncationError,
)
from ..types import Dataset, DetectionRecord, GroundTruthRecord
from .logger import get_logger
from .util import PathLike, atomic_write, csv_text

logger = get_logger('feature_store')

MAGIC = b'FEAT1'
VERSION = 1
HEADER = struct.Struct('<5sxHIIII')
HEADER_SIZE = HEADER.size  # 24

DETECTION_HEADER = ('image_id', 'class_id', 'score', 'x1', 'y1', 'x2', 'y2')
GROUND_TRUTH_HEADER = ('image_id', 'class_id', 'x1', 'y1', 'x2', 'y2', 'difficult')

_U32_MAX = 2 ** 32 - 1


def record_dtype(channels: int, spatial: int) -> np.dtype:
    """Упакованный (без выравнивания) dtype одной записи выборки."""
    return np.dtype([
        ('image_id', '<u4'),
        ('class_id', '<u4'),
        ('difficult', 'u1'),
        ('box', '<f4', (4,)),
        ('values', '<f4', (channels, spatial, spatial)),
    ])


# --- бинарный формат --------------------------------------------------------------

def encode_dataset(d: Dataset) -> bytes:
    """Сериализует набор в байты FEAT1."""
    n = len(d)
    for name, value in (('N', n), ('T', d.num_classes), ('C', d.channels), ('S', d.spatial)):
        if value > _U32_MAX:
            raise ShapeError(f"{name}={value} не помещается в u32")
    if n and d.image_ids.max() > _U32_MAX:
        raise ShapeError("image_id не помещается в u32")

    values32 = d.features.astype('<f4', copy=False)
    finite = np.isfinite(values32.reshape(n, d.dimension)).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteValueError(f"выборка {bad}: значение не представимо в f32", sample_index=bad)

    records = np.zeros(n, dtype=record_dtype(d.channels, d.spatial))
    records['image_id'] = d.image_ids
    records['class_id'] = d.class_ids
    records['difficult'] = d.difficult
    records['box'] = d.boxes
    records['values'] = values32

    header = HEADER.pack(MAGIC, VERSION, n, d.num_classes, d.channels, d.spatial)
    return header + records.tobytes()


def decode_dataset(payload: bytes) -> Dataset:
    """Разбирает байты FEAT1 в Dataset."""
    if len(payload) < HEADER_SIZE:
        if MAGIC.startswith(payload[:5]) and len(payload) > 0:
            raise TruncationError(f"заголовок обрезан: {len(payload)} байт из {HEADER_SIZE}")
        raise FormatError("файл не начинается с магии FEAT1")

    magic, version, n, t, c, s = HEADER.unpack_from(payload)
    if magic != MAGIC:
        raise FormatError(f"неверная магия {magic!r}, ожидается {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"неподдерживаемая версия формата {version}")
    if t < 1 or c < 1 or s < 1:
        raise FormatError(f"некорректная геометрия в заголовке: T={t}, C={c}, S={s}")

    dtype = record_dtype(c, s)
    expected = HEADER_SIZE + n * dtype.itemsize
    if len(payload) < expected:
        raise TruncationError(
            f"данные обрезаны: объявлено {n} выборок ({expected} байт), получено {len(payload)} байт"
        )
    if len(payload) > expected:
        raise FormatError(f"лишние {len(payload) - expected} байт после {n} выборок")

    records = np.frombuffer(payload, dtype=dtype, count=n, offset=HEADER_SIZE)
    values = records['values'].astype(np.float32)
    finite = np.isfinite(values.reshape(n, c * s * s)).all(axis=1)
    if not finite.all():
        bad = int(np.flatnonzero(~finite)[0])
        raise NonFiniteValueError(f"выборка {bad}: карта признаков содержит NaN/Inf", sample_index=bad)
    difficult = records['difficult']
    if n and difficult.max() > 1:
        bad = int(np.flatnonzero(difficult > 1)[0])
        raise FormatError(f"выборка {bad}: флаг difficult должен быть 0 или 1")

    return Dataset(
        num_classes=t, channels=c, spatial=s,
        features=values,
        class_ids=records['class_id'].astype(np.int64),
        boxes=records['box'].astype(np.float32),
        image_ids=records['image_id'].astype(np.int64),
        difficult=difficult.astype(bool),
    )


def read_dataset(path: PathLike) -> Dataset:
    """Читает набор из файла .feat."""
    try:
        payload = Path(path).read_bytes()
    except FileNotFoundError as e:
        raise IoError(f"файл не найден: {path}") from e
    except OSError as e:
        raise IoError(f"не удалось прочитать {path}: {e}") from e
    dataset = decode_dataset(payload)
    logger.debug(f"📂 Прочитано {len(dataset)} выборок из {path}")
    return dataset


def write_dataset(d: Dataset, path: PathLike) -> None:
    """Пишет набор в файл .feat атомарно."""
    atomic_write(path, encode_dataset(d))
    logger.debug(f"💾 Записано {len(d)} выборок в {path}")


# --- CSV ---------------------------------------------------------------------------

def read_csv_rows(path: PathLike, header: Sequence[str]) -> List[tuple]:
    """Строки CSV с номерами; первая строка файла обязана совпадать с заголовком header."""
    try:
        text = Path(path).read_text(encoding='utf-8')
    except FileNotFoundError as e:
        raise IoError(f"файл не найден: {path}") from e
    reader = csv.reader(io.StringIO(text))
    first = next(reader, None)
    if first is None or tuple(cell.strip() for cell in first) != tuple(header):
        raise ParseError(f"первая строка должна быть заголовком {','.join(header)}", line=1)
    rows = []
    for line_no, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        cells = [cell.strip() for cell in row]
        if len(cells) != len(header):
            raise ParseError(f"ожидается {len(header)} полей, получено {len(cells)}", line=line_no)
        rows.append((line_no, cells))
    return rows


def _parse_int(cell: str, name: str, line: int) -> int:
    try:
        value = int(cell)
    except ValueError as e:
        raise ParseError(f"поле {name}: не целое число {cell!r}", line=line) from e
    if value < 0:
        raise ParseError(f"поле {name}: отрицательное значение {value}", line=line)
    return value


def _parse_float(cell: str, name: str, line: int) -> float:
    try:
        return float(cell)
    except ValueError as e:
        raise ParseError(f"поле {name}: не число {cell!r}", line=line) from e


def read_detections(path: PathLike) -> List[DetectionRecord]:
    """Читает CSV детекций `image_id,class_id,score,x1,y1,x2,y2`."""
    records = []
    for line, cells in read_csv_rows(path, DETECTION_HEADER):
        image_id = _parse_int(cells[0], 'image_id', line)
        class_id = _parse_int(cells[1], 'class_id', line)
        score, x1, y1, x2, y2 = (_parse_float(v, k, line) for k, v in zip(DETECTION_HEADER[2:], cells[2:]))
        try:
            records.append(DetectionRecord(image_id, class_id, score, (x1, y1, x2, y2)))
        except (ValueError, ShapeError) as e:
            raise ParseError(str(e), line=line) from e
    return records


def write_detections(records: Sequence[DetectionRecord], path: PathLike) -> None:
    """Пишет CSV детекций; вещественные поля — 17 значащих цифр."""
    rows = ((r.image_id, r.class_id, float(r.score), *map(float, r.box)) for r in records)
    atomic_write(path, csv_text(DETECTION_HEADER, rows))


def read_ground_truth(path: PathLike) -> List[GroundTruthRecord]:
    """Читает CSV разметки `image_id,class_id,x1,y1,x2,y2,difficult`."""
    records = []
    for line, cells in read_csv_rows(path, GROUND_TRUTH_HEADER):
        image_id = _parse_int(cells[0], 'image_id', line)
        class_id = _parse_int(cells[1], 'class_id', line)
        x1, y1, x2, y2 = (_parse_float(v, k, line) for k, v in zip(GROUND_TRUTH_HEADER[2:6], cells[2:6]))
        flag = cells[6].lower()
        if flag not in ('0', '1', 'true', 'false'):
            raise ParseError(f"поле difficult: ожидается 0/1, получено {cells[6]!r}", line=line)
        try:
            records.append(GroundTruthRecord(image_id, class_id, (x1, y1, x2, y2), flag in ('1', 'true')))
        except (ValueError, ShapeError) as e:
            raise ParseError(str(e), line=line) from e
    return records


def write_ground_truth(records: Sequence[GroundTruthRecord], path: PathLike) -> None:
    """Пишет CSV разметки."""
    rows = ((r.image_id, r.class_id, *map(float, r.box), int(r.difficult)) for r in records)
    atomic_write(path, csv_text(GROUND_TRUTH_HEADER, rows))
