import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kdss.core import ClassMap, PointCloud

settings.register_profile(
    "kdss", deadline=None, suppress_health_check=[HealthCheck.too_slow], max_examples=60
)
settings.load_profile("kdss")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def labeled_cloud(n, rng, n_classes=3, colors=True):
    return PointCloud(
        positions=rng.random((n, 3)),
        colors=rng.integers(0, 256, (n, 3)) if colors else None,
        labels=rng.integers(0, n_classes, n),
        class_map=ClassMap(tuple(f"c{i}" for i in range(n_classes))),
    )


@pytest.fixture
def small_cloud(rng):
    return labeled_cloud(10, rng)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
