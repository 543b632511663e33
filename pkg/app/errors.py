"""
Иерархия исключений конвейера редактирования признаков.

Каждое исключение знает свой код выхода CLI:
2 — ошибка конфигурации, 3 — ошибка данных, 4 — численная ошибка.
"""

from typing import Optional


class FeatEditError(Exception):
    """Базовое исключение пакета."""

    exit_code = 1


# --- конфигурация -------------------------------------------------------------

class ConfigError(FeatEditError):
    """Некорректная конфигурация запуска."""

    exit_code = 2


class SpecError(ConfigError):
    """Некорректная спецификация синтетических данных."""


# --- данные ---------------------------------------------------------------------

class DataError(FeatEditError):
    """Некорректные входные данные."""

    exit_code = 3


class FormatError(DataError):
    """Файл не соответствует формату (магия, версия, поля)."""


class TruncationError(DataError):
    """Файл обрезан: данных меньше, чем объявлено в заголовке."""


class NonFiniteValueError(DataError, ValueError):
    """В карте признаков найдено NaN/Inf."""

    def __init__(self, message: str, sample_index: Optional[int] = None):
        super().__init__(message)
        self.sample_index = sample_index


class ParseError(DataError):
    """Строка CSV не разбирается."""

    def __init__(self, message: str, line: Optional[int] = None):
        super().__init__(f"строка {line}: {message}" if line is not None else message)
        self.line = line


class IoError(DataError):
    """Ошибка ввода-вывода при записи артефакта."""


class ShapeError(DataError, ValueError):
    """Несовпадение размерностей."""


class GeometryError(DataError, ValueError):
    """Вырожденная геометрия: рамка или пространственное окно."""


class ChannelIndexError(DataError, IndexError):
    """Индекс канала вне диапазона."""


class EmptyInputError(DataError):
    """Пустой вход там, где нужен хотя бы один элемент."""


class MissingClassError(DataError):
    """Для класса нет ни одной строки или маски."""


class ClassIdError(DataError):
    """Неизвестный идентификатор класса."""


class InputContractError(DataError):
    """Нарушен контракт входа (например, смешаны изображения в NMS)."""


class DegenerateLabelsError(DataError):
    """Во входе для бинарного классификатора только один класс."""


class InsufficientDataError(DataError):
    """Слишком мало данных для операции."""


class DomainError(DataError, ValueError):
    """Значение вне области определения (например, отрицательная дисперсия)."""


class OracleScaleError(DataError):
    """Вход слишком велик для медленного эталона."""


class LockError(DataError):
    """Каталог вывода занят другим процессом."""


# --- численные ------------------------------------------------------------------

class NumericalError(FeatEditError):
    """Численно вырожденная ситуация."""

    exit_code = 4


class UndefinedDistributionError(NumericalError):
    """Распределение не определено: все исходные дисперсии нулевые."""


class DegenerateClassError(NumericalError):
    """Для класса не определено ни intra-, ни inter-распределение."""


class DegenerateDatasetError(NumericalError):
    """Ни для одного класса распределения не определены."""


# --- конвейер -------------------------------------------------------------------

class StageError(FeatEditError):
    """Ошибка стадии конвейера с контекстом."""

    def __init__(self, stage: str, cause: BaseException, context: Optional[dict] = None):
        self.stage = stage
        self.cause = cause
        self.context = context or {}
        details = ", ".join(f"{k}={v}" for k, v in sorted(self.context.items()))
        suffix = f" ({details})" if details else ""
        super().__init__(f"стадия '{stage}': {cause}{suffix}")

    @property
    def exit_code(self) -> int:  # type: ignore[override]
        return getattr(self.cause, 'exit_code', 1)
