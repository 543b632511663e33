"""
Синтетические карты признаков с заложенными ролями каналов.

Роли каналов для класса c:
  friendly(c) — форма распределения единиц зависит от класса: √a·B + √(1−a)·Z, B = ±1, Z ~ N(0, 1),
                эксцесс −2a², a выбирается из linspace(0.55, 0.98, T) перестановкой по каналу;
                плюс слабый сдвиг положения Δ·g(c, i);
  noisy(c)    — у каждой выборки своя доля «выбросов» p ~ U(0, 0.3) (единица умножается на 4),
                поэтому эксцесс сильно гуляет внутри класса; плюс ложный сдвиг положения δ,
                который на тесте уменьшается до δ·(1 − shift);
  flat        — одно распределение (a = 0.1, общий сдвиг) для всех классов.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import FormatError, IoError, SpecError
from ..types import ChannelRoles, Dataset, EditMask, GroundTruthRecord
from .logger import get_logger
from .util import PathLike, atomic_write_json

logger = get_logger('synth')

IMAGE_WIDTH = 500.0
IMAGE_HEIGHT = 375.0


@dataclass(frozen=True)
class SynthSpec:
    """Параметры генератора; роли каналов заданы явно (см. SynthSpec.planted)."""
    num_classes: int = 3
    channels: int = 32
    spatial: int = 6
    n_per_class: int = 200
    n_test_per_class: Optional[int] = None
    flat: Tuple[int, ...] = ()
    noisy: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    seed: int = 0
    shift: float = 1.0
    proposals_per_object: int = 2
    friendly_levels: Tuple[float, float] = (0.55, 0.98)
    flat_shape: float = 0.1
    location_step: float = 0.1
    noisy_offset: float = 1.0
    max_spike_rate: float = 0.3
    spike_scale: float = 4.0
    jitter: float = 0.1

    def __post_init__(self):
        if self.num_classes < 1 or self.channels < 1 or self.spatial < 1:
            raise SpecError(f"некорректная геометрия: T={self.num_classes}, C={self.channels}, S={self.spatial}")
        if self.n_per_class < 1 or (self.n_test_per_class is not None and self.n_test_per_class < 1):
            raise SpecError("число выборок на класс должно быть ≥ 1")
        if self.proposals_per_object < 1:
            raise SpecError("proposals_per_object должен быть ≥ 1")
        if not 0.0 <= self.shift <= 1.0:
            raise SpecError(f"shift должен лежать в [0, 1], получено {self.shift}")
        lo, hi = self.friendly_levels
        for name, value in (('friendly_levels', lo), ('friendly_levels', hi), ('flat_shape', self.flat_shape)):
            if not 0.0 <= value <= 1.0:
                raise SpecError(f"{name}: доля ±1-компоненты должна лежать в [0, 1], получено {value}")

        flat = set(self.flat)
        if len(flat) != len(self.flat):
            raise SpecError("в наборе flat есть повторы")
        for c, channels in self.noisy.items():
            if not 0 <= c < self.num_classes:
                raise SpecError(f"noisy: класс {c} вне [0, {self.num_classes})")
            if len(set(channels)) != len(channels):
                raise SpecError(f"noisy({c}): повторяющиеся каналы")
            overlap = flat & set(channels)
            if overlap:
                raise SpecError(f"каналы {sorted(overlap)} одновременно flat и noisy({c})")
        for ch in list(flat) + [ch for chs in self.noisy.values() for ch in chs]:
            if not 0 <= ch < self.channels:
                raise SpecError(f"канал {ch} вне [0, {self.channels})")

    @classmethod
    def planted(cls, seed: int = 0, num_classes: int = 3, channels: int = 32, noisy_per_class: int = 4,
                flat_count: int = 10, **kwargs) -> "SynthSpec":
        """Роли раздаются сидированной перестановкой: сначала flat, затем непересекающиеся noisy по классам."""
        needed = flat_count + num_classes * noisy_per_class
        if needed > channels:
            raise SpecError(f"ролям нужно {needed} каналов, а их всего {channels}")
        perm = np.random.default_rng([seed, 0]).permutation(channels)
        flat = tuple(sorted(int(ch) for ch in perm[:flat_count]))
        noisy = {}
        for c in range(num_classes):
            start = flat_count + c * noisy_per_class
            noisy[c] = tuple(sorted(int(ch) for ch in perm[start:start + noisy_per_class]))
        return cls(num_classes=num_classes, channels=channels, flat=flat, noisy=noisy, seed=seed, **kwargs)

    def noisy_of(self, class_id: int) -> Tuple[int, ...]:
        return tuple(self.noisy.get(class_id, ()))

    def friendly_of(self, class_id: int) -> Tuple[int, ...]:
        """Все каналы, не входящие ни во flat, ни в noisy(class_id)."""
        taken = set(self.flat) | set(self.noisy_of(class_id))
        return tuple(ch for ch in range(self.channels) if ch not in taken)

    def roles(self) -> ChannelRoles:
        return ChannelRoles(
            num_classes=self.num_classes,
            channels=self.channels,
            friendly={str(c): list(self.friendly_of(c)) for c in range(self.num_classes)},
            noisy={str(c): list(self.noisy_of(c)) for c in range(self.num_classes)},
            flat=list(self.flat),
            seed=self.seed,
            shift=self.shift,
        )


@dataclass
class SynthResult:
    """Обучающая и тестовая выборки с разметкой и ролями каналов."""
    train: Dataset
    test: Dataset
    train_gt: List[GroundTruthRecord]
    test_gt: List[GroundTruthRecord]
    roles: ChannelRoles


@dataclass
class _ChannelParams:
    shape: np.ndarray     # (T, C): доля ±1-компоненты
    location: np.ndarray  # (T, C): сдвиг положения
    noisy: np.ndarray     # (T, C) bool


def _channel_params(spec: SynthSpec) -> _ChannelParams:
    rng = np.random.default_rng([spec.seed, 1])
    t, c = spec.num_classes, spec.channels
    levels = np.linspace(spec.friendly_levels[0], spec.friendly_levels[1], t)
    shape = np.empty((t, c))
    for ch in range(c):
        shape[:, ch] = levels[rng.permutation(t)]
    location = spec.location_step * rng.standard_normal((t, c))

    flat = list(spec.flat)
    if flat:
        shape[:, flat] = spec.flat_shape
        location[:, flat] = location[0, flat]

    noisy = np.zeros((t, c), dtype=bool)
    for cls_id in range(t):
        noisy[cls_id, list(spec.noisy_of(cls_id))] = True
    return _ChannelParams(shape=shape, location=location, noisy=noisy)


def _draw_units(rng: np.random.Generator, class_id: int, params: _ChannelParams, spec: SynthSpec,
                offset: float) -> np.ndarray:
    units = spec.spatial * spec.spatial
    c = spec.channels
    signs = rng.integers(0, 2, size=(c, units)) * 2.0 - 1.0
    gauss = rng.standard_normal((c, units))
    a = params.shape[class_id][:, None]
    values = np.sqrt(a) * signs + np.sqrt(1.0 - a) * gauss + params.location[class_id][:, None]

    noisy = np.flatnonzero(params.noisy[class_id])
    if noisy.size:
        rates = rng.uniform(0.0, spec.max_spike_rate, size=noisy.size)
        spikes = rng.random((noisy.size, units)) < rates[:, None]
        scale = np.where(spikes, spec.spike_scale, 1.0)
        values[noisy] = gauss[noisy] * scale + params.location[class_id][noisy, None] + offset
    return values.reshape(c, spec.spatial, spec.spatial)


def _object_box(rng: np.random.Generator) -> Tuple[float, float, float, float]:
    w = rng.uniform(50.0, 200.0)
    h = rng.uniform(50.0, 200.0)
    x1 = rng.uniform(0.0, IMAGE_WIDTH - w)
    y1 = rng.uniform(0.0, IMAGE_HEIGHT - h)
    return x1, y1, x1 + w, y1 + h


def _jitter_box(rng: np.random.Generator, box: Sequence[float], jitter: float) -> Tuple[float, ...]:
    x1, y1, x2, y2 = box
    w, h = x2 - x1, y2 - y1
    cx = x1 + 0.5 * w + jitter * w * rng.standard_normal()
    cy = y1 + 0.5 * h + jitter * h * rng.standard_normal()
    w *= math.exp(jitter * rng.standard_normal())
    h *= math.exp(jitter * rng.standard_normal())
    return cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h


def _generate_split(spec: SynthSpec, params: _ChannelParams, split: int, per_class: int,
                    offset: float, image_base: int) -> Tuple[Dataset, List[GroundTruthRecord]]:
    k = spec.proposals_per_object
    objects_per_class = math.ceil(per_class / k)
    n = per_class * spec.num_classes
    s = spec.spatial
    features = np.empty((n, spec.channels, s, s), dtype=np.float32)
    class_ids = np.empty(n, dtype=np.int64)
    image_ids = np.empty(n, dtype=np.int64)
    boxes = np.empty((n, 4), dtype=np.float32)
    gts: List[GroundTruthRecord] = []

    j = 0
    obj = 0
    for class_id in range(spec.num_classes):
        made = 0
        for _ in range(objects_per_class):
            box_rng = np.random.default_rng([spec.seed, 4 + split, obj])
            gt_box = _object_box(box_rng)
            image_id = image_base + obj
            gts.append(GroundTruthRecord(image_id=image_id, class_id=class_id, box=gt_box))
            for _ in range(min(k, per_class - made)):
                sample_rng = np.random.default_rng([spec.seed, 2 + split, j])
                features[j] = _draw_units(sample_rng, class_id, params, spec, offset)
                class_ids[j] = class_id
                image_ids[j] = image_id
                boxes[j] = _jitter_box(box_rng, gt_box, spec.jitter)
                j += 1
                made += 1
            obj += 1

    dataset = Dataset(
        num_classes=spec.num_classes, channels=spec.channels, spatial=s, features=features,
        class_ids=class_ids, boxes=boxes, image_ids=image_ids, difficult=np.zeros(n, dtype=bool),
    )
    return dataset, gts


def generate(spec: SynthSpec) -> SynthResult:
    """Детерминированно по seed строит обучающий и тестовый наборы."""
    params = _channel_params(spec)
    test_per_class = spec.n_test_per_class or spec.n_per_class
    train, train_gt = _generate_split(spec, params, 0, spec.n_per_class, spec.noisy_offset, image_base=0)
    test_offset = spec.noisy_offset * (1.0 - spec.shift)
    test_base = len(train_gt)
    test, test_gt = _generate_split(spec, params, 1, test_per_class, test_offset, image_base=test_base)
    logger.info(
        f"🧪 Синтетика seed={spec.seed}: train {len(train)}, test {len(test)}, "
        f"T={spec.num_classes}, C={spec.channels}, S={spec.spatial}, shift={spec.shift}"
    )
    return SynthResult(train=train, test=test, train_gt=train_gt, test_gt=test_gt, roles=spec.roles())


# --- роли и восстановление ---------------------------------------------------------------

def write_roles(roles: ChannelRoles, path: PathLike) -> None:
    atomic_write_json(path, dict(roles))


def read_roles(path: PathLike) -> ChannelRoles:
    try:
        raw = json.loads(Path(path).read_text(encoding='utf-8'))
    except FileNotFoundError as e:
        raise IoError(f"файл ролей не найден: {path}") from e
    except json.JSONDecodeError as e:
        raise FormatError(f"файл ролей {path} не является JSON: {e}") from e
    missing = [k for k in ('num_classes', 'channels', 'friendly', 'noisy', 'flat') if k not in raw]
    if missing:
        raise FormatError(f"в файле ролей нет ключей: {', '.join(missing)}")
    return ChannelRoles(
        num_classes=int(raw['num_classes']), channels=int(raw['channels']),
        friendly={str(k): [int(ch) for ch in v] for k, v in raw['friendly'].items()},
        noisy={str(k): [int(ch) for ch in v] for k, v in raw['noisy'].items()},
        flat=[int(ch) for ch in raw['flat']],
        seed=int(raw.get('seed', 0)), shift=float(raw.get('shift', 0.0)),
    )


def recovery(masks: Sequence[EditMask], roles: ChannelRoles) -> Dict[str, float]:
    """
    Насколько маски нашли заложенные роли (средние по классам):
    noisy_recall — доля noisy(c) в dropped_intra(c); flat_recall — доля flat в dropped_inter;
    friendly_dropped — доля friendly(c), попавших в отброшенные.
    """
    flat = set(roles['flat'])
    noisy_recall, flat_recall, friendly_dropped = [], [], []
    for mask in masks:
        key = str(mask.class_id)
        noisy = set(roles['noisy'].get(key, []))
        friendly = set(roles['friendly'].get(key, []))
        if noisy:
            noisy_recall.append(len(noisy & mask.dropped_intra) / len(noisy))
        if flat:
            flat_recall.append(len(flat & mask.dropped_inter) / len(flat))
        if friendly:
            friendly_dropped.append(len(friendly & set(mask.dropped)) / len(friendly))

    def mean(values: List[float]) -> float:
        return math.fsum(values) / len(values) if values else float('nan')

    return {
        'noisy_recall': mean(noisy_recall),
        'flat_recall': mean(flat_recall),
        'friendly_dropped': mean(friendly_dropped),
    }
