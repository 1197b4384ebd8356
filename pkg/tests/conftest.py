import numpy as np
import pytest

from fragility.core import Dataset
from fragility.experiments import SyntheticSpec, gen_gaussian_clusters


def clusters(n_per_class=10, seed=0, classes=2, **kw):
    train, _ = gen_gaussian_clusters(SyntheticSpec(samples_per_class=n_per_class, class_count=classes,
                                                   test_per_class=5, seed=seed, **kw))
    return train


def random_instance(rng, n_max=12, c_max=3, dim=2):
    """Small dataset with every class present."""
    C = int(rng.integers(2, c_max + 1))
    N = int(rng.integers(max(C, 6), n_max + 1))
    y = np.concatenate([np.arange(C), rng.integers(0, C, N - C)])
    rng.shuffle(y)
    centers = rng.normal(0, 1.5, (C, dim))
    X = centers[y] + rng.normal(0, 1, (N, dim))
    return Dataset(X, y, C)


@pytest.fixture
def binary_small():
    return clusters(10, seed=1)


@pytest.fixture
def separable():
    X = np.array([[-2.0, -1.0], [-1.5, -2.0], [-1.0, -1.2], [1.0, 1.5], [2.0, 1.0], [1.2, 2.2]])
    return Dataset(X, [0, 0, 0, 1, 1, 1], 2)


ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
