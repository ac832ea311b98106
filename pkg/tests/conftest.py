import functools
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from powerfit.fixtures import generate_dataset, train_fixture

FIXTURE_SEEDS = (0, 1, 2, 3, 4)


@functools.lru_cache(maxsize=None)
def blobs_fixture(seed: int, arch: tuple = (2, 16, 3), n: int = 600):
    ds = generate_dataset("blobs", n, seed, classes=arch[-1], dims=arch[0])
    return train_fixture(list(arch), ds, 500, 0.1, seed), ds


@pytest.fixture
def blobs0():
    return blobs_fixture(0)


@pytest.fixture
def deep_fixture():
    return blobs_fixture(3, (4, 24, 16, 3))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
