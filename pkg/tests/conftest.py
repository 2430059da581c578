import os

import numpy as np
import pytest
from hypothesis import settings

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def fixture_env(monkeypatch):
    monkeypatch.setenv("PRIVPLANE_DATA", FIXTURES)
    return FIXTURES


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
