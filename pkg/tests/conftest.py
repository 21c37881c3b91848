import numpy as np
import pytest

from gazealign.pipeline import BenchmarkSpec


def random_unit(rng, n, max_angle=60.0):
    """Unit vectors pointing into the frustum, within ``max_angle`` of -z."""
    theta = rng.uniform(-max_angle, max_angle, n)
    phi = rng.uniform(-max_angle, max_angle, n)
    t, p = np.radians(theta), np.radians(phi)
    return np.column_stack([-np.cos(t) * np.sin(p), -np.sin(t), -np.cos(t) * np.cos(p)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def standard_bench():
    return BenchmarkSpec()


@pytest.fixture(scope="session")
def standard_data(standard_bench):
    return standard_bench.build()


_ACCEPTANCE = []


@pytest.fixture
def criterion():
    """Record ``(number, passed, detail)`` for the acceptance summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _ACCEPTANCE.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
