import sys

import numpy as np
import pytest

from symstress.mesh import generate_unit_square, refine_uniform


@pytest.fixture(scope="session")
def mesh2():
    return generate_unit_square(2)


@pytest.fixture(scope="session")
def mesh4():
    return generate_unit_square(4)


@pytest.fixture(scope="session")
def jittered4():
    return generate_unit_square(4, jitter=0.3, seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def refined(m, levels):
    for _ in range(levels):
        m = refine_uniform(m)
    return m


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(results, key=lambda k: int(k[1:])):
        terminalreporter.write_line(results[name])
