import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from geoxray import metric as M

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def flat():
    return M.euclidean()


@pytest.fixture(scope="session")
def bump():
    return M.conformal_bump(0.05)


@pytest.fixture(scope="session")
def sphere_like():
    return M.constant_curvature(1.0)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    """Record one PASS/FAIL line per criterion; echoed now and in the terminal summary."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{name} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
