import functools

import numpy as np
import pytest

from zdshield.config import load_preset
from zdshield.harness import Bench, run_scenario

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@functools.lru_cache(maxsize=None)
def scenario(name):
    """Cached preset run shared across test modules."""
    return run_scenario(load_preset(name))


@functools.lru_cache(maxsize=None)
def bench(name):
    return Bench.from_config(load_preset(name))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
