import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# Filled by the acceptance tests; echoed at the end of every run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture(scope="session")
def grid():
    from magskin.magnetics import MagnetometerGrid
    return MagnetometerGrid.default()


@pytest.fixture(scope="session")
def anyskin0():
    from magskin.skins import generate_instance, preset
    return generate_instance(preset("anyskin"), 0)


@pytest.fixture(scope="session")
def reskin0():
    from magskin.skins import generate_instance, preset
    return generate_instance(preset("reskin"), 0)
