"""Real-time vintage ingestion and point-in-time statistics snapshots.

Every observation carries the date from which it was publicly available, and
``snapshot_at`` only ever looks at observations released on or before the
requested date, so the harness cannot leak future data into a prompt.

CSV layouts (UTF-8, header row, ISO dates, decimal point)::

    rate.csv  available_from,value
    cpi.csv   ref_year,ref_month,value,available_from
    gdp.csv   ref_year,ref_quarter,value,available_from

A blank ``available_from`` in the CPI/GDP files falls back to an approximate
release rule (see :func:`fallback_release`) and the observation is flagged.
"""

from __future__ import annotations

import bisect
import csv
import dataclasses
import datetime as dt
import math
from importlib import resources
from pathlib import Path

from .dates import add_months, is_grid_date, months_between
from .domain import MacroSnapshot, VariableKind
from .errors import DuplicatePeriod, EmptySeries, NoDataAvailable, OffGrid, ParseError, UnsortedSeries

CPI_RELEASE_LAG_DAYS = 15
GDP_RELEASE_LAG_DAYS = 45

_COLUMNS = {
    VariableKind.FED_RATE_LOWER_BOUND: ("available_from", "value"),
    VariableKind.CPI_YOY: ("ref_year", "ref_month", "value", "available_from"),
    VariableKind.GDP_YOY: ("ref_year", "ref_quarter", "value", "available_from"),
}


@dataclasses.dataclass(frozen=True)
class Observation:
    """One first-release value.

    ``period`` is ``(year, month)`` for CPI, ``(year, quarter)`` for GDP and
    ``(year, month, day)`` of the effective date for the policy rate.
    """

    period: tuple[int, ...]
    value: float
    available_from: dt.date
    approximate: bool = False


def period_end(variable: VariableKind, period: tuple[int, ...]) -> dt.date:
    if variable is VariableKind.CPI_YOY:
        year, month = period
        return add_months(dt.date(year, month, 1), 1) - dt.timedelta(days=1)
    if variable is VariableKind.GDP_YOY:
        year, quarter = period
        return add_months(dt.date(year, 3 * quarter - 2, 1), 3) - dt.timedelta(days=1)
    return dt.date(*period)


def fallback_release(variable: VariableKind, period: tuple[int, ...]) -> dt.date:
    """Approximate release date used when a row has no ``available_from``.

    CPI: month end + 15 days, GDP: quarter end + 45 days. Both put the previous
    month's CPI and the previous quarter's GDP in reach on the 15th of the
    second month of each quarter.
    """
    lag = CPI_RELEASE_LAG_DAYS if variable is VariableKind.CPI_YOY else GDP_RELEASE_LAG_DAYS
    return period_end(variable, period) + dt.timedelta(days=lag)


@dataclasses.dataclass(frozen=True)
class VintageSeries:
    variable: VariableKind
    observations: tuple[Observation, ...]

    def __post_init__(self):
        if not self.observations:
            raise EmptySeries(f"{self.variable.value} series has no observations")
        periods = [o.period for o in self.observations]
        for prev, cur in zip(periods, periods[1:]):
            if cur == prev:
                raise DuplicatePeriod(f"{self.variable.value}: duplicate period {cur}")
            if cur < prev:
                raise UnsortedSeries(f"{self.variable.value}: {cur} listed after {prev}")
        if self.variable is not VariableKind.FED_RATE_LOWER_BOUND:
            for o in self.observations:
                if o.available_from <= period_end(self.variable, o.period):
                    raise ParseError(
                        f"{self.variable.value} {o.period}: available_from "
                        f"{o.available_from} is not after the period end"
                    )
        # latest period released by each date; release dates need not be monotone
        object.__setattr__(self, "_by_release", sorted(self.observations, key=lambda o: o.available_from))

    def __len__(self):
        return len(self.observations)

    def latest_available(self, date: dt.date) -> Observation:
        """Observation with the latest reference period among those released by ``date``."""
        released = self._by_release
        k = bisect.bisect_right([o.available_from for o in released], date)
        if k == 0:
            raise NoDataAvailable(f"no {self.variable.value} observation released by {date}")
        return max(released[:k], key=lambda o: o.period)


def _parse_float(text: str, where: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{where}: not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"{where}: non-finite value {text!r}")
    return value


def _parse_int(text: str, where: str, lo: int, hi: int) -> int:
    try:
        value = int(text)
    except ValueError:
        raise ParseError(f"{where}: not an integer: {text!r}") from None
    if not lo <= value <= hi:
        raise ParseError(f"{where}: {value} outside [{lo}, {hi}]")
    return value


def _parse_date(text: str, where: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text.strip())
    except ValueError:
        raise ParseError(f"{where}: bad ISO date {text!r}") from None


def load_series(path, variable: VariableKind) -> VintageSeries:
    path = Path(path)
    expected = _COLUMNS[variable]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise EmptySeries(f"{path}: empty file")
        header = [h.strip() for h in header]
        if tuple(header) != expected:
            raise ParseError(f"{path}: expected header {','.join(expected)}, got {','.join(header)}")
        observations = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            where = f"{path}:{lineno}"
            if len(row) != len(expected):
                raise ParseError(f"{where}: expected {len(expected)} fields, got {len(row)}")
            rec = dict(zip(expected, (c.strip() for c in row)))
            value = _parse_float(rec["value"], where)
            if variable is VariableKind.FED_RATE_LOWER_BOUND:
                day = _parse_date(rec["available_from"], where)
                observations.append(Observation((day.year, day.month, day.day), value, day))
                continue
            year = _parse_int(rec["ref_year"], where, 1000, 9999)
            if variable is VariableKind.CPI_YOY:
                sub = _parse_int(rec["ref_month"], where, 1, 12)
            else:
                sub = _parse_int(rec["ref_quarter"], where, 1, 4)
            period = (year, sub)
            if rec["available_from"]:
                observations.append(Observation(period, value, _parse_date(rec["available_from"], where)))
            else:
                observations.append(
                    Observation(period, value, fallback_release(variable, period), approximate=True)
                )
    if not observations:
        raise EmptySeries(f"{path}: no data rows")
    return VintageSeries(variable, tuple(observations))


@dataclasses.dataclass(frozen=True)
class VintageStore:
    rate: VintageSeries
    cpi: VintageSeries
    gdp: VintageSeries

    @classmethod
    def from_dir(cls, path) -> "VintageStore":
        path = Path(path)
        return cls(
            rate=load_series(path / "rate.csv", VariableKind.FED_RATE_LOWER_BOUND),
            cpi=load_series(path / "cpi.csv", VariableKind.CPI_YOY),
            gdp=load_series(path / "gdp.csv", VariableKind.GDP_YOY),
        )

    @classmethod
    def bundled(cls) -> "VintageStore":
        """Illustrative demo vintages shipped with the package (see data/README.md)."""
        with resources.as_file(resources.files("fakedate") / "data") as path:
            return cls.from_dir(path)

    def snapshot_at(self, date: dt.date) -> MacroSnapshot:
        return snapshot_at(date, self)


def snapshot_at(date: dt.date, store: VintageStore) -> MacroSnapshot:
    """Statistics block as it could have been written on ``date``."""
    rate = store.rate.latest_available(date)
    gdp = store.gdp.latest_available(date)
    cpi = store.cpi.latest_available(date)
    return MacroSnapshot(
        rate_lower_bound=rate.value,
        gdp_yoy=gdp.value,
        gdp_year=gdp.period[0],
        gdp_quarter=gdp.period[1],
        cpi_yoy=cpi.value,
        cpi_year=cpi.period[0],
        cpi_month=cpi.period[1],
    )


def quarterly_grid(start: dt.date, end: dt.date) -> list[dt.date]:
    """Protocol dates (15th of Feb/May/Aug/Nov) from ``start`` to ``end`` inclusive."""
    for d in (start, end):
        if not is_grid_date(d):
            raise OffGrid(f"{d} is not a grid date (15th of Feb, May, Aug or Nov)")
    if end < start:
        raise ValueError(f"grid end {end} precedes start {start}")
    return [add_months(start, 3 * k) for k in range(months_between(start, end) // 3 + 1)]
