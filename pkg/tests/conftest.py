import numpy as np
import pytest

from sgdual.geometry import make_domain


@pytest.fixture(scope="session")
def cube():
    """The unit cube centred at the origin."""
    return make_domain({"kind": "box", "center": [0, 0, 0], "half_widths": [0.5, 0.5, 0.5]})


@pytest.fixture(scope="session")
def ball():
    return make_domain({"kind": "ball", "center": [0, 0, 0], "radius": 1.0, "facets": 320})


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture(scope="session")
def verdicts(request):
    """Collects one PASS/FAIL line per acceptance criterion."""
    return request.config._acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
