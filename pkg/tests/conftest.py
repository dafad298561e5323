import numpy as np
import pytest

from spinforge.system import bundled_system


@pytest.fixture(scope="session")
def system():
    return bundled_system()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_hermitian(rng, n, scale=1.0):
    dim = 2**n
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    return scale * (a + a.conj().T) / 2


def unitary_distance(u, v):
    """1 - |tr(u^dag v)| / dim, insensitive to global phase."""
    return 1 - abs(np.trace(u.conj().T @ v)) / u.shape[0]


# (number, title, passed, detail) rows filled in by the acceptance suite
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {number:>2} {title}: {detail}")
