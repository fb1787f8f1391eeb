import os

import pytest
from hypothesis import settings

from ghdiag import fit_mle, load_fixture

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def lung():
    return load_fixture("lung")


@pytest.fixture(scope="session")
def leukemia():
    return load_fixture("leukemia")


@pytest.fixture(scope="session")
def lung_fit(lung):
    return fit_mle(lung, "pgw", "gh")


@pytest.fixture(scope="session")
def leukemia_fit(leukemia):
    return fit_mle(leukemia, "pgw", "gh")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
