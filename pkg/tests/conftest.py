import datetime as dt
from pathlib import Path

import pytest

from fakedate.dataio import VintageStore
from fakedate.domain import MacroSnapshot

HERE = Path(__file__).parent
GOLDENS = HERE / "goldens"
FIXTURES = HERE / "fixtures"


def golden(name: str) -> str:
    return (GOLDENS / name).read_text(encoding="utf-8")


@pytest.fixture(scope="session")
def store():
    return VintageStore.bundled()


@pytest.fixture
def snap_2005():
    # statistics block of the May 15, 2005 prompt
    return MacroSnapshot(rate_lower_bound=3.0, gdp_yoy=3.6, gdp_quarter=1, gdp_year=2005,
                         cpi_yoy=3.5, cpi_month=4, cpi_year=2005)


D_2005 = dt.date(2005, 5, 15)
FAKE = dt.date(2030, 2, 15)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line; the summary is printed at the end of the run."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        lines[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
