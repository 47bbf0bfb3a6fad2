"""Answer extraction: pull the numeric forecast (or a refusal) out of a response."""

from __future__ import annotations

import dataclasses
import enum
import math
import re

from .domain import VariableKind

_NUMBER = re.compile(r"([+-]?\d+(?:\.\d+)?)\s*%?")
_EMPHASIS = "*_`"
_DASHES = str.maketrans({"−": "-", "–": "-", "‒": "-", "‐": "-"})


class Refusal(enum.Enum):
    EXPLICIT_NA = "explicit_na"
    NO_MARKER = "no_marker"


@dataclasses.dataclass(frozen=True)
class ForecastSample:
    """One parsed response: exactly one of ``value`` and ``refusal`` is set."""

    raw_text: str
    value: float | None = None
    refusal: Refusal | None = None

    def __post_init__(self):
        if (self.value is None) == (self.refusal is None):
            raise ValueError("a sample is either numeric or a refusal")
        if self.value is not None and not math.isfinite(self.value):
            raise ValueError("numeric forecast must be finite")

    @property
    def is_numeric(self) -> bool:
        return self.value is not None


def _payload(line: str, marker: str) -> str:
    idx = line.lower().rindex(marker.lower())
    rest = line[idx + len(marker):].translate(_DASHES)
    return rest.strip().strip(_EMPHASIS).strip()


def extract_forecast(raw_text: str, variable: VariableKind) -> ForecastSample:
    """Parse the last marker line for ``variable``; never raises."""
    marker = variable.marker.lower()
    lines = [ln for ln in raw_text.splitlines() if marker in ln.lower()]
    if not lines:
        return ForecastSample(raw_text, refusal=Refusal.NO_MARKER)
    m = _NUMBER.match(_payload(lines[-1], variable.marker))
    if m is None:
        return ForecastSample(raw_text, refusal=Refusal.EXPLICIT_NA)
    value = float(m.group(1))
    if not math.isfinite(value):
        return ForecastSample(raw_text, refusal=Refusal.EXPLICIT_NA)
    return ForecastSample(raw_text, value=value + 0.0)  # fold -0.0
