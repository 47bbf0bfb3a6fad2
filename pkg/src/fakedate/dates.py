"""Calendar helpers: month arithmetic, protocol grid checks, long-form dates."""

from __future__ import annotations

import calendar
import datetime as dt

GRID_MONTHS = (2, 5, 8, 11)
GRID_DAY = 15

_MONTH_NUMBERS = {name: i for i, name in enumerate(calendar.month_name) if name}


def add_months(d: dt.date, months: int) -> dt.date:
    """Shift ``d`` by a whole number of months, carrying into the year.

    The day of month is kept; it is clamped only when the target month is
    shorter (never the case for day 15).
    """
    total = d.year * 12 + (d.month - 1) + months
    year, month0 = divmod(total, 12)
    day = min(d.day, calendar.monthrange(year, month0 + 1)[1])
    return dt.date(year, month0 + 1, day)


def months_between(start: dt.date, end: dt.date) -> int:
    """Whole calendar months from ``start`` to ``end`` (day of month ignored)."""
    return (end.year - start.year) * 12 + (end.month - start.month)


def is_grid_date(d: dt.date) -> bool:
    return d.day == GRID_DAY and d.month in GRID_MONTHS


def quarter_of(month: int) -> int:
    return (month - 1) // 3 + 1


def preceding_month(d: dt.date) -> tuple[int, int]:
    """(year, month) of the calendar month before the one containing ``d``."""
    prev = add_months(d.replace(day=1), -1)
    return prev.year, prev.month


def preceding_quarter(d: dt.date) -> tuple[int, int]:
    """(year, quarter) of the quarter before the one containing ``d``."""
    q = quarter_of(d.month)
    return (d.year - 1, 4) if q == 1 else (d.year, q - 1)


def format_long(d: dt.date) -> str:
    """``May 15, 2005``"""
    return f"{calendar.month_name[d.month]} {d.day}, {d.year}"


def parse_long(text: str) -> dt.date:
    """Inverse of :func:`format_long`."""
    month_name, rest = text.strip().split(" ", 1)
    day, year = rest.split(",")
    return dt.date(int(year), _MONTH_NUMBERS[month_name], int(day))


def month_number(name: str) -> int:
    return _MONTH_NUMBERS[name]


def parse_iso(text: str) -> dt.date:
    return dt.date.fromisoformat(text.strip())
