import pytest

from fbound.core import MarketParams

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE = []


@pytest.fixture(scope="session")
def bench():
    return MarketParams(r=0.1, q=0.05, E=10.0, T=1.0, sigma=0.2)


@pytest.fixture(scope="session")
def bench_curve(bench):
    from fbound.integral_eq import solve_boundary
    return solve_boundary(bench)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
