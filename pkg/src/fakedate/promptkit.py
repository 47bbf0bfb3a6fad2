"""Prompt construction for the fake-date protocols.

A prompt is fully determined by :class:`PromptComponents`. ``real_prompt`` builds
the retrospective prompt for a forecast origin, ``fake_prompt`` moves the current
and target dates past the model's release date while keeping the cutoff and the
statistics, and ``render_prompt`` substitutes everything into a template.
"""

from __future__ import annotations

import calendar
import dataclasses
import datetime as dt
import functools
import math
import re
import string
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Mapping

from .dates import add_months, format_long, month_number, months_between, parse_long
from .domain import MacroSnapshot, VariableKind
from .errors import FakeBeforeReal, InvalidComponents, MissingTemplate, PromptParseError

PLACEHOLDERS = (
    "date_cutoff",
    "date",
    "rate",
    "GDP_value_period",
    "GDP_value_year",
    "GDP",
    "CPI_value_period",
    "CPI_value_year",
    "CPI",
    "date_forecast",
)

DEFAULT_TEMPLATE = "default"

_PLACEHOLDER_PATTERNS = {
    "date_cutoff": r"[A-Z][a-z]+ \d{1,2}, \d{4}",
    "date": r"[A-Z][a-z]+ \d{1,2}, \d{4}",
    "date_forecast": r"[A-Z][a-z]+ \d{1,2}, \d{4}",
    "rate": r"-?\d+\.\d",
    "GDP": r"-?\d+\.\d",
    "CPI": r"-?\d+\.\d",
    "GDP_value_period": r"[1-4]",
    "GDP_value_year": r"\d{4}",
    "CPI_value_period": r"[A-Z][a-z]+",
    "CPI_value_year": r"\d{4}",
}


def format_percent(value: float) -> str:
    """One decimal digit, ties rounded away from zero; never ``-0.0``."""
    if not math.isfinite(value):
        raise InvalidComponents(f"non-finite percentage {value!r}")
    q = Decimal(repr(float(value))).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP)
    if q == 0:
        q = Decimal("0.0")
    return f"{q:.1f}"


@dataclasses.dataclass(frozen=True, eq=False)
class TemplateSet:
    """One template string per forecast variable, with named ``{placeholders}``."""

    templates: Mapping[VariableKind, str]
    name: str = DEFAULT_TEMPLATE

    def __post_init__(self):
        for variable, text in self.templates.items():
            fields = [f for _, f, _, _ in string.Formatter().parse(text) if f is not None]
            if sorted(fields) != sorted(PLACEHOLDERS):
                raise ValueError(
                    f"template for {variable.value} must use each placeholder exactly once; "
                    f"found {fields}"
                )

    def __getitem__(self, variable: VariableKind) -> str:
        try:
            return self.templates[variable]
        except KeyError:
            raise MissingTemplate(f"no template for {variable.value}") from None

    @classmethod
    def from_dir(cls, path, name=None) -> "TemplateSet":
        """Load ``rate.txt``, ``cpi.txt`` and ``gdp.txt`` (whichever exist) from ``path``."""
        path = Path(path)
        found = {}
        for v in VariableKind:
            f = path / f"{v.value}.txt"
            if f.exists():
                found[v] = f.read_text(encoding="utf-8")
        return cls(found, name or path.name)

    @classmethod
    def default(cls) -> "TemplateSet":
        return _default_templates()


@functools.lru_cache(maxsize=1)
def _default_templates() -> TemplateSet:
    root = resources.files("fakedate") / "templates"
    return TemplateSet(
        {v: (root / f"{v.value}.txt").read_text(encoding="utf-8") for v in VariableKind},
        DEFAULT_TEMPLATE,
    )


@dataclasses.dataclass(frozen=True)
class PromptComponents:
    t_current: dt.date
    t_forecast: dt.date
    t_cutoff: dt.date
    variable: VariableKind
    snapshot: MacroSnapshot
    template: str = DEFAULT_TEMPLATE

    @property
    def horizon_months(self) -> int:
        return months_between(self.t_current, self.t_forecast)

    def validate(self) -> None:
        if not self.t_cutoff <= self.t_current < self.t_forecast:
            raise InvalidComponents(
                f"need t_cutoff <= t_current < t_forecast, got {self.t_cutoff}, "
                f"{self.t_current}, {self.t_forecast}"
            )
        if not self.snapshot.labels_consistent_with(self.t_current):
            s = self.snapshot
            raise InvalidComponents(
                f"statistics labels Q{s.gdp_quarter} {s.gdp_year} / "
                f"{s.cpi_year}-{s.cpi_month:02d} do not precede {self.t_current}"
            )


def render_prompt(components: PromptComponents, templates: TemplateSet | None = None) -> str:
    templates = templates or TemplateSet.default()
    components.validate()
    s = components.snapshot
    return templates[components.variable].format(
        date_cutoff=format_long(components.t_cutoff),
        date=format_long(components.t_current),
        rate=format_percent(s.rate_lower_bound),
        GDP_value_period=s.gdp_quarter,
        GDP_value_year=s.gdp_year,
        GDP=format_percent(s.gdp_yoy),
        CPI_value_period=calendar.month_name[s.cpi_month],
        CPI_value_year=s.cpi_year,
        CPI=format_percent(s.cpi_yoy),
        date_forecast=format_long(components.t_forecast),
    )


def real_prompt(
    t_retro: dt.date,
    h: int,
    d: int,
    variable: VariableKind,
    snapshot: MacroSnapshot,
    template: str = DEFAULT_TEMPLATE,
) -> PromptComponents:
    """Retrospective prompt: forecast ``h`` months ahead, cutoff ``d`` months back."""
    if h <= 0:
        raise InvalidComponents(f"horizon must be positive, got {h}")
    if d < 0:
        raise InvalidComponents(f"cutoff depth must be non-negative, got {d}")
    return PromptComponents(
        t_current=t_retro,
        t_forecast=add_months(t_retro, h),
        t_cutoff=add_months(t_retro, -d),
        variable=variable,
        snapshot=snapshot,
        template=template,
    )


def fake_prompt(real: PromptComponents, t_fake: dt.date) -> PromptComponents:
    """Move current and target dates to ``t_fake`` in parallel.

    The cutoff and every statistic stay as they were; only the period labels of
    the statistics follow the new current date.
    """
    if t_fake < real.t_current:
        raise FakeBeforeReal(f"fake date {t_fake} precedes real date {real.t_current}")
    return dataclasses.replace(
        real,
        t_current=t_fake,
        t_forecast=add_months(t_fake, real.horizon_months),
        snapshot=real.snapshot.relabeled(t_fake),
    )


def seasonal_fake_date(t_retro: dt.date, fake_year: int) -> dt.date:
    """Fake date sharing month and day with ``t_retro``; only the year moves."""
    if fake_year < t_retro.year:
        raise FakeBeforeReal(f"fake year {fake_year} precedes {t_retro.year}")
    return t_retro.replace(year=fake_year)


@functools.lru_cache(maxsize=16)
def _template_regex(template: str) -> re.Pattern:
    parts = []
    for literal, field, _, _ in string.Formatter().parse(template):
        parts.append(re.escape(literal))
        if field is not None:
            parts.append(f"(?P<{field}>{_PLACEHOLDER_PATTERNS[field]})")
    return re.compile("".join(parts))


@functools.lru_cache(maxsize=4096)
def _parse_prompt_cached(text: str, templates: TemplateSet) -> PromptComponents:
    for variable in VariableKind:
        if variable not in templates.templates:
            continue
        m = _template_regex(templates[variable]).fullmatch(text)
        if m is None:
            continue
        g = m.groupdict()
        snapshot = MacroSnapshot(
            rate_lower_bound=float(g["rate"]),
            gdp_yoy=float(g["GDP"]),
            gdp_quarter=int(g["GDP_value_period"]),
            gdp_year=int(g["GDP_value_year"]),
            cpi_yoy=float(g["CPI"]),
            cpi_month=month_number(g["CPI_value_period"]),
            cpi_year=int(g["CPI_value_year"]),
        )
        return PromptComponents(
            t_current=parse_long(g["date"]),
            t_forecast=parse_long(g["date_forecast"]),
            t_cutoff=parse_long(g["date_cutoff"]),
            variable=variable,
            snapshot=snapshot,
            template=templates.name,
        )
    raise PromptParseError("prompt does not match any template")


def parse_prompt(text: str, templates: TemplateSet | None = None) -> PromptComponents:
    """Recover the components of a rendered prompt (values at prompt precision)."""
    return _parse_prompt_cached(text, templates or TemplateSet.default())
