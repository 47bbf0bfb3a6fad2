"""Value types shared across modules: forecast variables and macro snapshots."""

from __future__ import annotations

import dataclasses
import datetime as dt
import enum
import math

from .dates import preceding_month, preceding_quarter


class VariableKind(enum.Enum):
    FED_RATE_LOWER_BOUND = "rate"
    CPI_YOY = "cpi"
    GDP_YOY = "gdp"

    @property
    def marker(self) -> str:
        """Answer marker the prompt asks the model to print."""
        return _MARKERS[self]

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, text: str) -> "VariableKind":
        key = text.strip().lower()
        for v in cls:
            if key in (v.value, v.name.lower()):
                return v
        raise ValueError(f"unknown variable {text!r}; expected one of rate, cpi, gdp")


_MARKERS = {
    VariableKind.FED_RATE_LOWER_BOUND: "Interest rate forecast:",
    VariableKind.CPI_YOY: "Inflation forecast:",
    VariableKind.GDP_YOY: "GDP growth forecast:",
}

_LABELS = {
    VariableKind.FED_RATE_LOWER_BOUND: "Fed interest rate (lower bound)",
    VariableKind.CPI_YOY: "CPI growth (YoY)",
    VariableKind.GDP_YOY: "Real GDP growth (YoY)",
}

ALL_VARIABLES = tuple(VariableKind)


@dataclasses.dataclass(frozen=True)
class MacroSnapshot:
    """Statistics block quoted in a prompt.

    Values are percents; ``gdp_quarter``/``gdp_year`` and ``cpi_month``/``cpi_year``
    label the reference periods they describe.
    """

    rate_lower_bound: float
    gdp_yoy: float
    gdp_quarter: int
    gdp_year: int
    cpi_yoy: float
    cpi_month: int
    cpi_year: int

    def __post_init__(self):
        for name in ("rate_lower_bound", "gdp_yoy", "cpi_yoy"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not 1 <= self.gdp_quarter <= 4:
            raise ValueError(f"gdp_quarter out of range: {self.gdp_quarter}")
        if not 1 <= self.cpi_month <= 12:
            raise ValueError(f"cpi_month out of range: {self.cpi_month}")

    def value_of(self, variable: VariableKind) -> float:
        return {
            VariableKind.FED_RATE_LOWER_BOUND: self.rate_lower_bound,
            VariableKind.CPI_YOY: self.cpi_yoy,
            VariableKind.GDP_YOY: self.gdp_yoy,
        }[variable]

    def labels_consistent_with(self, t_current: dt.date) -> bool:
        return (
            (self.gdp_year, self.gdp_quarter) == preceding_quarter(t_current)
            and (self.cpi_year, self.cpi_month) == preceding_month(t_current)
        )

    def relabeled(self, t_current: dt.date) -> "MacroSnapshot":
        """Same numbers, period labels moved to the periods preceding ``t_current``."""
        gy, gq = preceding_quarter(t_current)
        cy, cm = preceding_month(t_current)
        return dataclasses.replace(
            self, gdp_year=gy, gdp_quarter=gq, cpi_year=cy, cpi_month=cm
        )
