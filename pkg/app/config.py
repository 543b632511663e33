"""
Конфигурация запуска: переменные окружения (.env) + плоский файл key=value + переопределения CLI.
"""

import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, get_args

from dotenv import dotenv_values, load_dotenv

from .errors import ConfigError
from .types import ApMode, NegativeEdit, Variant

SEED_ENV = 'FEAT_EDIT_SEED'
LOG_DIR_ENV = 'FEAT_EDIT_LOG_DIR'
LOG_LEVEL_ENV = 'FEAT_EDIT_LOG_LEVEL'

VARIANTS = get_args(Variant)
NEGATIVE_EDIT_MODES = get_args(NegativeEdit)
AP_MODES = get_args(ApMode)


def _check_fraction(name: str, value: float) -> None:
    if not (isinstance(value, (int, float)) and math.isfinite(value) and 0.0 <= value <= 1.0):
        raise ConfigError(f"{name} должен лежать в [0, 1], получено {value!r}")


@dataclass(frozen=True)
class EditConfig:
    """Доли отбрасываемых каналов (20% intra, 30% inter) и seed случайного редактирования."""
    intra_frac: float = 0.20
    inter_frac: float = 0.30
    seed: int = 0

    def __post_init__(self):
        _check_fraction('intra_frac', self.intra_frac)
        _check_fraction('inter_frac', self.inter_frac)


@dataclass(frozen=True)
class SvmConfig:
    """Параметры линейного SVM (L2-регуляризация, L1 hinge)."""
    reg_lambda: float = 1e-4
    epochs: int = 50
    seed: int = 0
    tolerance: float = 1e-6
    positive_weight: float = 1.0

    def __post_init__(self):
        if not self.reg_lambda > 0:
            raise ConfigError(f"reg_lambda должен быть > 0, получено {self.reg_lambda}")
        if self.epochs < 1:
            raise ConfigError(f"epochs должен быть ≥ 1, получено {self.epochs}")
        if not self.tolerance > 0:
            raise ConfigError(f"tolerance должен быть > 0, получено {self.tolerance}")
        if not self.positive_weight > 0:
            raise ConfigError(f"positive_weight должен быть > 0, получено {self.positive_weight}")


@dataclass(frozen=True)
class EvalConfig:
    """Пороги NMS и сопоставления, режим AP."""
    nms_iou: float = 0.30
    match_iou: float = 0.50
    ap_mode: ApMode = 'eleven_point'

    def __post_init__(self):
        for name in ('nms_iou', 'match_iou'):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ConfigError(f"{name} должен лежать в (0, 1), получено {value}")
        if self.ap_mode not in AP_MODES:
            raise ConfigError(f"ap_mode должен быть одним из {AP_MODES}, получено {self.ap_mode!r}")


@dataclass(frozen=True)
class RunConfig:
    """Полная конфигурация эксперимента."""
    train: Path
    test: Path
    train_gt: Path
    test_gt: Path
    output: Path
    variant: Variant = 'merged'
    seed: int = 0
    roles: Optional[Path] = None
    negative_edit: NegativeEdit = 'classifier-class'
    random_drop_ratio: float = 0.5
    ridge_lambda: float = 1e-3
    regression_iou: float = 0.6
    edit: EditConfig = field(default_factory=EditConfig)
    svm: SvmConfig = field(default_factory=SvmConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant должен быть одним из {VARIANTS}, получено {self.variant!r}")
        if self.negative_edit not in NEGATIVE_EDIT_MODES:
            raise ConfigError(
                f"negative_edit должен быть одним из {NEGATIVE_EDIT_MODES}, получено {self.negative_edit!r}"
            )
        if not 0.0 <= self.random_drop_ratio < 1.0:
            raise ConfigError(f"random_drop_ratio должен лежать в [0, 1), получено {self.random_drop_ratio}")
        if not self.ridge_lambda > 0:
            raise ConfigError(f"ridge_lambda должен быть > 0, получено {self.ridge_lambda}")
        if not 0.0 < self.regression_iou <= 1.0:
            raise ConfigError(f"regression_iou должен лежать в (0, 1], получено {self.regression_iou}")

    def to_dict(self) -> Dict[str, Any]:
        """Плоское JSON-совместимое представление (ключи совпадают с ключами файла)."""
        flat: Dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (EditConfig, SvmConfig, EvalConfig)):
                for key, item in asdict(value).items():
                    if key == 'seed':
                        continue
                    flat[key] = item
            elif isinstance(value, Path):
                flat[f.name] = str(value)
            else:
                flat[f.name] = value
        return flat


# Ключ файла → (раздел, тип); раздел None означает поле самого RunConfig.
_KEYS: Dict[str, tuple] = {
    'train': (None, Path), 'test': (None, Path), 'train_gt': (None, Path), 'test_gt': (None, Path),
    'roles': (None, Path), 'output': (None, Path), 'variant': (None, str), 'seed': (None, int),
    'negative_edit': (None, str), 'random_drop_ratio': (None, float), 'ridge_lambda': (None, float),
    'regression_iou': (None, float),
    'intra_frac': ('edit', float), 'inter_frac': ('edit', float),
    'reg_lambda': ('svm', float), 'epochs': ('svm', int), 'tolerance': ('svm', float),
    'positive_weight': ('svm', float),
    'nms_iou': ('eval', float), 'match_iou': ('eval', float), 'ap_mode': ('eval', str),
}
_REQUIRED = ('train', 'test', 'train_gt', 'test_gt', 'output')


def load_environment() -> None:
    """Загружает .env (если есть) в окружение процесса."""
    load_dotenv()


def env_seed() -> Optional[int]:
    """Seed из FEAT_EDIT_SEED или None."""
    raw = os.getenv(SEED_ENV)
    if raw is None or not raw.strip():
        return None
    try:
        return int(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV} должен быть целым числом, получено {raw!r}") from e


def resolve_seed(explicit: Optional[int], configured: Optional[int] = None) -> int:
    """Порядок: флаг CLI > файл конфигурации > FEAT_EDIT_SEED > 0."""
    if explicit is not None:
        return explicit
    if configured is not None:
        return configured
    from_env = env_seed()
    return from_env if from_env is not None else 0


def parse_overrides(pairs: Optional[list]) -> Dict[str, str]:
    """Разбирает список 'key=value' из --set."""
    result: Dict[str, str] = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise ConfigError(f"переопределение должно иметь вид key=value, получено {pair!r}")
        key, value = pair.split('=', 1)
        result[key.strip()] = value.strip()
    return result


def _convert(key: str, raw: Any, kind: type) -> Any:
    if kind is str or isinstance(raw, kind):
        return raw
    try:
        return kind(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"ключ {key}: не удалось преобразовать {raw!r} к {kind.__name__}") from e


def build_run_config(values: Mapping[str, Any], seed: Optional[int] = None) -> RunConfig:
    """Строит RunConfig из плоского словаря ключей файла конфигурации."""
    unknown = sorted(set(values) - set(_KEYS))
    if unknown:
        raise ConfigError(f"неизвестные ключи конфигурации: {', '.join(unknown)}")
    missing = [k for k in _REQUIRED if values.get(k) in (None, '')]
    if missing:
        raise ConfigError(f"не заданы обязательные ключи: {', '.join(missing)}")

    top: Dict[str, Any] = {}
    sections: Dict[str, Dict[str, Any]] = {'edit': {}, 'svm': {}, 'eval': {}}
    for key, raw in values.items():
        if raw is None or raw == '':
            continue
        section, kind = _KEYS[key]
        value = _convert(key, raw, kind)
        if section is None:
            top[key] = value
        else:
            sections[section][key] = value

    run_seed = resolve_seed(seed, top.pop('seed', None))
    return RunConfig(
        seed=run_seed,
        edit=EditConfig(seed=run_seed, **sections['edit']),
        svm=SvmConfig(seed=run_seed, **sections['svm']),
        eval=EvalConfig(**sections['eval']),
        **top,
    )


def load_run_config(path: Optional[Path], overrides: Optional[Mapping[str, Any]] = None,
                    seed: Optional[int] = None) -> RunConfig:
    """Читает файл key=value (формат .env) и применяет переопределения."""
    values: Dict[str, Any] = {}
    if path is not None:
        if not Path(path).exists():
            raise ConfigError(f"файл конфигурации не найден: {path}")
        values.update({k: v for k, v in dotenv_values(path).items()})
    values.update(overrides or {})
    return build_run_config(values, seed=seed)


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 канонического JSON разрешённой конфигурации."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()
