import gmpy2
import pytest

from cwchain.core import ChainModel
from cwchain.kernels import available_backends
from cwchain.precision import working_precision

HAS_C = "c" in available_backends()
needs_c = pytest.mark.skipif(not HAS_C, reason="compiled kernel not built")


@pytest.fixture
def prec30():
    with working_precision(30):
        yield 30


@pytest.fixture(scope="session")
def fig3_model():
    """J=1.4 chain with the three-point window g0=1/2, g1=1/4."""
    return ChainModel.build("1.4", 25, 1, "tabulated", table=["0.5", "0.25"], precision=30)


@pytest.fixture(scope="session")
def small_model():
    return ChainModel.build("1.4", 10, 2, "triangular", precision=30)


def close(a, b, tol):
    return abs(gmpy2.mpfr(a) - gmpy2.mpfr(b)) <= tol


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the terminal summary and echo it."""

    def emit(number, ok: bool, text: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
