import numpy as np
import pytest

from symptom_forecast import synthgen
from symptom_forecast.domain import build_transitions, date_split


@pytest.fixture(scope="session")
def default_cohort():
    config = synthgen.CohortConfig()
    profiles, surveys = synthgen.generate(config)
    return config, profiles, surveys


@pytest.fixture(scope="session")
def default_transitions(default_cohort):
    _, profiles, surveys = default_cohort
    return build_transitions(profiles, surveys)


@pytest.fixture(scope="session")
def default_split(default_cohort, default_transitions):
    config = default_cohort[0]
    return date_split(default_transitions, config.split_date)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_VERDICTS):
            terminalreporter.write_line(line)
