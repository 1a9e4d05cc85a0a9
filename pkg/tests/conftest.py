import pytest

from odorcast.synthetic import synthetic_city

ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, passed: bool | None, detail: str) -> None:
    """Log one acceptance line; ``passed=None`` marks a skipped optional check."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"criterion {criterion:>2}: {status}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def city():
    return synthetic_city(weeks=10, seed=0)


@pytest.fixture(scope="session")
def city_dataset(city):
    from odorcast.evaluate import build_dataset

    return build_dataset(city.reports, city.readings)
