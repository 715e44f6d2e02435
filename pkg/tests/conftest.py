import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_generator(rng, n, density=0.7):
    """Dense irreducible generator with a guaranteed cycle through all states."""
    A = rng.uniform(0.1, 2.0, (n, n)) * (rng.uniform(size=(n, n)) < density)
    for i in range(n):
        A[i, (i + 1) % n] = rng.uniform(0.5, 2.0)
    np.fill_diagonal(A, 0.0)
    np.fill_diagonal(A, -A.sum(axis=1))
    return A


def pytest_configure(config):
    config._acceptance_lines = []


@pytest.fixture
def verdict(request, capsys):
    """Print a PASS/FAIL line for an acceptance criterion, then assert it."""
    lines = request.config._acceptance_lines

    def record(name, ok, detail=""):
        tag = "INFO" if ok is None else "PASS" if ok else "FAIL"
        line = f"{tag} {name}: {detail}".rstrip(": ")
        lines.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok is None or ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
