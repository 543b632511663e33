"""
Общие фикстуры тестов.
"""

import numpy as np
import pytest

from app.services.feature_store import write_dataset, write_ground_truth
from app.services.logger import close_logging, pipeline_logger
from app.services.synth import SynthSpec, generate, write_roles
from app.types import Dataset


def random_dataset(seed: int, num_classes: int = 3, channels: int = 8, spatial: int = 3,
                   per_class: int = 10) -> Dataset:
    """Случайный набор: классы идут блоками по per_class выборок, рамки невырожденные."""
    rng = np.random.default_rng(seed)
    n = num_classes * per_class
    features = rng.standard_normal((n, channels, spatial, spatial)).astype(np.float32)
    x1 = rng.uniform(0.0, 300.0, n)
    y1 = rng.uniform(0.0, 200.0, n)
    w = rng.uniform(20.0, 150.0, n)
    h = rng.uniform(20.0, 150.0, n)
    return Dataset(
        num_classes=num_classes, channels=channels, spatial=spatial, features=features,
        class_ids=np.repeat(np.arange(num_classes), per_class),
        boxes=np.column_stack([x1, y1, x1 + w, y1 + h]),
        image_ids=np.arange(n), difficult=np.zeros(n, dtype=bool),
    )


@pytest.fixture
def make_dataset():
    return random_dataset


@pytest.fixture
def synth_files(tmp_path):
    """Маленький синтетический набор на диске: train/test .feat, разметка и роли."""
    spec = SynthSpec.planted(seed=3, spatial=3, n_per_class=20)
    result = generate(spec)
    data = tmp_path / 'data'
    paths = {
        'train': data / 'train.feat', 'test': data / 'test.feat',
        'train_gt': data / 'train_gt.csv', 'test_gt': data / 'test_gt.csv',
        'roles': data / 'roles.json',
    }
    write_dataset(result.train, paths['train'])
    write_dataset(result.test, paths['test'])
    write_ground_truth(result.train_gt, paths['train_gt'])
    write_ground_truth(result.test_gt, paths['test_gt'])
    write_roles(result.roles, paths['roles'])
    return paths


@pytest.fixture(autouse=True)
def _reset_logging():
    """Файловые логи и метрики не переживают тест."""
    yield
    close_logging()
    pipeline_logger.reset_metrics()
