"""Protocol orchestration: fake date tests I and II, K-variant family tests,
the release-date scan with its p-value grid, triple screening and
max-Wasserstein pair selection.
"""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import hashlib
import io
import itertools
import json
import logging
import math
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataio import VintageStore, quarterly_grid, snapshot_at
from .dates import add_months, parse_iso
from .domain import ALL_VARIABLES, VariableKind
from .errors import CellError, FakeDateError, InsufficientRows
from .modelgate import Gate, sample_forecasts
from .parse import ForecastSample, Refusal, extract_forecast
from .promptkit import (
    PromptComponents,
    TemplateSet,
    fake_prompt,
    real_prompt,
    render_prompt,
    seasonal_fake_date,
)
from .stats import KS, ComparisonResult, Sample, bonferroni_bound, compare, permutation_test, wasserstein

log = logging.getLogger(__name__)

PASS = "Pass"
FAIL = "Fail"

# statistics dates used for the release-date scan: crisis, taper, pandemic,
# inflation surge and the last pre-release quarter
STATISTICS_DATES_PRESET = (
    dt.date(2008, 11, 15),
    dt.date(2013, 8, 15),
    dt.date(2020, 5, 15),
    dt.date(2021, 8, 15),
    dt.date(2025, 2, 15),
)


@dataclasses.dataclass(frozen=True)
class RunConfig:
    n_samples: int = 100
    temperature: float = 0.7
    h: int = 12
    d: int = 36
    fake_date: dt.date = dt.date(2030, 2, 15)
    seasonal: bool = False
    n_perm: int = 10_000
    # extra permutations for a family's smallest p when it sits at 1 / (1 + n_perm)
    refine_n_perm: int = 100_000
    alpha: float = 0.05
    grid_start: dt.date = dt.date(2005, 5, 15)
    grid_end: dt.date = dt.date(2025, 2, 15)
    variables: tuple[VariableKind, ...] = ALL_VARIABLES
    master_seed: int = 0
    model_id: str = "model"
    gate: str = "simulated-unbiased"
    keep_going: bool = False
    statistic: str = KS
    scan_cutoff: dt.date = dt.date(2025, 8, 15)
    scan_horizon_end: dt.date = dt.date(2035, 11, 15)
    scan_baseline: dt.date = dt.date(2030, 2, 15)
    statistics_dates: tuple[dt.date, ...] = STATISTICS_DATES_PRESET

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.n_samples < 1:
            raise ValueError("n_samples must be at least 1")
        if self.n_perm < 1:
            raise ValueError("n_perm must be at least 1")
        if self.h <= 0 or self.d < 0:
            raise ValueError("need h > 0 and d >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")
        if not self.variables:
            raise ValueError("at least one variable is required")
        if self.master_seed < 0:
            raise ValueError("master_seed must be non-negative")

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, dt.date):
                v = v.isoformat()
            elif f.name == "variables":
                v = [x.value for x in v]
            elif f.name == "statistics_dates":
                v = [x.isoformat() for x in v]
            out[f.name] = v
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = {}
        for key, v in data.items():
            if key in ("fake_date", "grid_start", "grid_end", "scan_cutoff", "scan_horizon_end", "scan_baseline"):
                v = v if isinstance(v, dt.date) else parse_iso(str(v))
            elif key == "variables":
                v = tuple(x if isinstance(x, VariableKind) else VariableKind.parse(x) for x in v)
            elif key == "statistics_dates":
                v = tuple(x if isinstance(x, dt.date) else parse_iso(str(x)) for x in v)
            kw[key] = v
        return cls(**kw)


@dataclasses.dataclass(frozen=True)
class DistributionSummary:
    """Parsed forecasts of one prompt condition."""

    n: int
    values: tuple[float, ...]
    explicit_na: int = 0
    no_marker: int = 0

    @classmethod
    def from_samples(cls, samples: Sequence[ForecastSample]) -> "DistributionSummary":
        return cls(
            n=len(samples),
            values=tuple(s.value for s in samples if s.is_numeric),
            explicit_na=sum(s.refusal is Refusal.EXPLICIT_NA for s in samples),
            no_marker=sum(s.refusal is Refusal.NO_MARKER for s in samples),
        )

    @property
    def refusals(self) -> int:
        return self.explicit_na + self.no_marker

    @property
    def mean(self) -> float | None:
        return math.fsum(self.values) / len(self.values) if self.values else None

    @property
    def sd(self) -> float | None:
        if len(self.values) < 2:
            return None
        m = self.mean
        return math.sqrt(math.fsum((v - m) ** 2 for v in self.values) / (len(self.values) - 1))

    def sample(self) -> Sample:
        return Sample(self.values, self.refusals)

    def as_dict(self) -> dict:
        return {"n": self.n, "values": list(self.values), "explicit_na": self.explicit_na,
                "no_marker": self.no_marker}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DistributionSummary":
        return cls(d["n"], tuple(d["values"]), d.get("explicit_na", 0), d.get("no_marker", 0))


@dataclasses.dataclass(frozen=True)
class CellResult:
    date: dt.date
    variable: VariableKind
    t_fake: dt.date
    target: dt.date  # forecast date of the real prompt
    comparison: ComparisonResult
    real: DistributionSummary
    fake: DistributionSummary
    refined: bool = False

    def as_dict(self) -> dict:
        return {
            "date": self.date.isoformat(),
            "variable": self.variable.value,
            "t_fake": self.t_fake.isoformat(),
            "target": self.target.isoformat(),
            "comparison": self.comparison.as_dict(),
            "real": self.real.as_dict(),
            "fake": self.fake.as_dict(),
            "refined": self.refined,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CellResult":
        return cls(
            date=parse_iso(d["date"]),
            variable=VariableKind.parse(d["variable"]),
            t_fake=parse_iso(d["t_fake"]),
            target=parse_iso(d["target"]),
            comparison=ComparisonResult(**d["comparison"]),
            real=DistributionSummary.from_dict(d["real"]),
            fake=DistributionSummary.from_dict(d["fake"]),
            refined=d.get("refined", False),
        )


@dataclasses.dataclass(frozen=True)
class TestOutcome:
    test: str
    cells: tuple[CellResult, ...]
    family_p: dict
    global_p: float
    decision: str
    alpha: float
    d: int
    errors: tuple[CellError, ...] = ()
    meta: dict = dataclasses.field(default_factory=dict)

    __test__ = False  # not a pytest class

    @property
    def complete(self) -> bool:
        return not self.errors

    def cell(self, date: dt.date, variable: VariableKind) -> CellResult:
        for c in self.cells:
            if c.date == date and c.variable is variable:
                return c
        raise KeyError((date, variable))

    def as_dict(self) -> dict:
        return {
            "test": self.test,
            "decision": self.decision,
            "global_p": self.global_p,
            "alpha": self.alpha,
            "d": self.d,
            "family_p": {v.value: p for v, p in self.family_p.items()},
            "cells": [c.as_dict() for c in self.cells],
            "errors": [str(e) for e in self.errors],
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "TestOutcome":
        """Inverse of :meth:`as_dict`; cell errors come back as plain strings."""
        return cls(
            test=d["test"],
            cells=tuple(CellResult.from_dict(c) for c in d["cells"]),
            family_p={VariableKind.parse(k): p for k, p in d["family_p"].items()},
            global_p=d["global_p"],
            decision=d["decision"],
            alpha=d["alpha"],
            d=d["d"],
            errors=tuple(d.get("errors", ())),
            meta=dict(d.get("meta", {})),
        )

    def digest(self) -> str:
        """Hash of the statistical content; run bookkeeping in ``meta`` is left out."""
        content = self.as_dict()
        del content["meta"]
        blob = json.dumps(content, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def comparison_seed(master_seed: int, prompt_a: str, prompt_b: str) -> int:
    """Permutation seed for one comparison, independent of scheduling order."""
    h = hashlib.blake2b(digest_size=8)
    for part in (str(master_seed), prompt_a, prompt_b):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return int.from_bytes(h.digest(), "little") >> 1


def _parse_all(texts: Iterable[str], variable: VariableKind) -> list[ForecastSample]:
    return [extract_forecast(t, variable) for t in texts]


def _sample_condition(components: PromptComponents, config: RunConfig, gate: Gate, templates):
    texts = sample_forecasts(components, config.n_samples, gate, seed=config.master_seed,
                             temperature=config.temperature, model_id=config.model_id, templates=templates)
    return DistributionSummary.from_samples(_parse_all(texts, components.variable))


def _decide(cells: Sequence[CellResult], variables, alpha: float):
    family_p = {}
    for v in variables:
        ps = [c.comparison.p_value for c in cells if c.variable is v]
        if ps:
            family_p[v] = bonferroni_bound(ps)
    if not family_p:
        raise FakeDateError("no completed comparisons to aggregate")
    global_p = bonferroni_bound(list(family_p.values()))
    return family_p, global_p, FAIL if global_p <= alpha else PASS


def _refine(cells: list[CellResult], config: RunConfig, seeds: dict) -> list[CellResult]:
    """Re-run the smallest p of each family with more permutations when it is
    at the resolution floor, so strong rejections are not capped at m / n_perm."""
    if config.refine_n_perm <= config.n_perm:
        return cells
    out = list(cells)
    for v in config.variables:
        idx = [i for i, c in enumerate(out) if c.variable is v]
        if not idx:
            continue
        i = min(idx, key=lambda k: (out[k].comparison.p_value, out[k].date))
        c = out[i]
        if c.comparison.n_ge != 0:
            continue
        perm = permutation_test(c.real.sample(), c.fake.sample(), config.statistic,
                                config.refine_n_perm, seeds[(c.date, v)] ^ 0x5EED)
        comp = dataclasses.replace(c.comparison, p_value=perm.p_value, n_perm=config.refine_n_perm,
                                   n_ge=perm.n_ge)
        out[i] = dataclasses.replace(c, comparison=comp, refined=True)
    return out


def _run_fake_date_test(name: str, config: RunConfig, gate: Gate, store: VintageStore,
                        templates: TemplateSet | None, dates=None) -> TestOutcome:
    dates = dates if dates is not None else quarterly_grid(config.grid_start, config.grid_end)
    cells, errors, seeds = [], [], {}
    for date in dates:
        for variable in config.variables:
            try:
                snapshot = snapshot_at(date, store)
                real = real_prompt(date, config.h, config.d, variable, snapshot)
                t_fake = seasonal_fake_date(date, config.fake_date.year) if config.seasonal else config.fake_date
                fake = fake_prompt(real, t_fake)
                real_dist = _sample_condition(real, config, gate, templates)
                fake_dist = _sample_condition(fake, config, gate, templates)
                seed = comparison_seed(config.master_seed, render_prompt(real, templates),
                                       render_prompt(fake, templates))
                comp = compare(real_dist.sample(), fake_dist.sample(), config.n_perm, seed, config.statistic)
            except FakeDateError as exc:
                err = CellError(date, variable, exc)
                if not config.keep_going:
                    raise err from exc
                log.error("%s", err)
                errors.append(err)
                continue
            seeds[(date, variable)] = seed
            cells.append(CellResult(date, variable, t_fake, real.t_forecast, comp, real_dist, fake_dist))
    cells = _refine(cells, config, seeds)
    family_p, global_p, decision = _decide(cells, config.variables, config.alpha)
    return TestOutcome(
        test=name,
        cells=tuple(cells),
        family_p=family_p,
        global_p=global_p,
        decision=decision,
        alpha=config.alpha,
        d=config.d,
        errors=tuple(errors),
        meta={"model_id": config.model_id, "gate": getattr(gate, "name", type(gate).__name__),
              "master_seed": config.master_seed, "n_dates": len(dates)},
    )


def fake_date_test_I(config: RunConfig, gate: Gate, store: VintageStore,
                     templates: TemplateSet | None = None, dates=None) -> TestOutcome:
    """Real-date versus fake-date forecasts with the cutoff ``d`` months back."""
    if config.d <= 0:
        raise ValueError("test I needs d > 0; use fake_date_test_II for d = 0")
    return _run_fake_date_test("I", config, gate, store, templates, dates)


def fake_date_test_II(config: RunConfig, gate: Gate, store: VintageStore,
                      templates: TemplateSet | None = None, dates=None) -> TestOutcome:
    """Same pipeline with the cutoff at the real forecast date (d = 0)."""
    requested = config.d
    outcome = _run_fake_date_test("II", dataclasses.replace(config, d=0), gate, store, templates, dates)
    if requested != 0:
        outcome.meta["d_requested"] = requested
    return outcome


def _self_comparison(sample: Sample, n_perm: int) -> ComparisonResult:
    return ComparisonResult(ks_stat=0.0, p_value=1.0, wasserstein=0.0, n_a=sample.size, n_b=sample.size,
                            n_perm=n_perm, seed=None, refusals_a=sample.refusal_count,
                            refusals_b=sample.refusal_count, n_ge=n_perm)


@dataclasses.dataclass(frozen=True)
class FamilyResult:
    """Pairwise comparisons of K prompt variants; ``matrix[i][j] is matrix[j][i]``."""

    variants: tuple[PromptComponents, ...]
    distributions: tuple[DistributionSummary, ...]
    matrix: tuple[tuple[ComparisonResult, ...], ...]

    def p_values(self) -> list[float]:
        k = len(self.variants)
        return [self.matrix[i][j].p_value for i in range(k) for j in range(i + 1, k)]


def family_test(variants: Sequence[PromptComponents], gate: Gate, statistic: str = KS, n_perm: int = 10_000,
                seed: int = 0, n_samples: int = 100, temperature: float = 0.7, model_id: str = "model",
                templates: TemplateSet | None = None) -> FamilyResult:
    if len(variants) < 2:
        raise ValueError("a family test needs at least two variants")
    cfg = RunConfig(n_samples=n_samples, temperature=temperature, master_seed=seed, model_id=model_id)
    dists = [_sample_condition(v, cfg, gate, templates) for v in variants]
    prompts = [render_prompt(v, templates) for v in variants]
    k = len(variants)
    m: list[list] = [[None] * k for _ in range(k)]
    for i in range(k):
        m[i][i] = _self_comparison(dists[i].sample(), n_perm)
        for j in range(i + 1, k):
            s = comparison_seed(seed, prompts[i], prompts[j])
            m[i][j] = m[j][i] = compare(dists[i].sample(), dists[j].sample(), n_perm, s, statistic)
    return FamilyResult(tuple(variants), tuple(dists), tuple(tuple(r) for r in m))


# release-date scan --------------------------------------------------------

Column = tuple  # (VariableKind, statistics date)


@dataclasses.dataclass(frozen=True)
class PValueGrid:
    """Rows are horizon dates, columns (variable, statistics date) pairs."""

    rows: tuple[dt.date, ...]
    columns: tuple[Column, ...]
    cells: tuple[tuple[float, ...], ...]
    baseline: dt.date
    cutoff: dt.date
    model: str = ""
    # per column: row -> Sample, kept for Wasserstein pair selection
    samples: dict | None = dataclasses.field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if len(self.cells) != len(self.rows) or any(len(r) != len(self.columns) for r in self.cells):
            raise ValueError("cell matrix does not match rows x columns")
        if list(self.rows) != sorted(set(self.rows)):
            raise ValueError("grid rows must be strictly increasing")
        if self.baseline in self.rows:
            base = self.cells[self.rows.index(self.baseline)]
            if any(p != 1.0 for p in base):
                raise ValueError(f"baseline row {self.baseline} must be 1.0 in every cell")

    def column(self, col: Column) -> list[float]:
        j = self.columns.index(col)
        return [r[j] for r in self.cells]

    def is_empty(self) -> bool:
        return not self.rows or not self.columns


def _parse_cell(text: str) -> float:
    return float(text.strip().replace(",", "."))


def _parse_column(name: str) -> Column:
    var, _, date = name.strip().partition("@")
    return VariableKind.parse(var), parse_iso(date)


def load_pvalue_grid(path, baseline: dt.date = dt.date(2030, 2, 15), cutoff: dt.date = dt.date(2025, 8, 15),
                     model: str | None = None) -> PValueGrid:
    """Read a grid CSV (``horizon_date,rate@2008-11-15,...``).

    Comma-separated files use decimal points; semicolon-separated files may use
    decimal commas as in typeset tables.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    first = text.splitlines()[0] if text.strip() else ""
    delimiter = ";" if ";" in first else ","
    reader = csv.reader(io.StringIO(text), delimiter=delimiter)
    header = next(reader, None)
    if not header or header[0].strip() != "horizon_date":
        raise ValueError(f"{path}: expected a 'horizon_date' header")
    columns = tuple(_parse_column(h) for h in header[1:])
    rows, cells = [], []
    for rec in reader:
        if not rec or not any(c.strip() for c in rec):
            continue
        rows.append(parse_iso(rec[0]))
        cells.append(tuple(_parse_cell(c) for c in rec[1:]))
    return PValueGrid(tuple(rows), columns, tuple(cells), baseline, cutoff, model or path.stem)


def scan_rows(cutoff: dt.date, horizon_end: dt.date) -> list[dt.date]:
    return quarterly_grid(cutoff, horizon_end)


def assumption2_scan(config: RunConfig, statistics_dates: Sequence[dt.date], horizon_end: dt.date,
                     baseline: dt.date, gate: Gate, store: VintageStore,
                     templates: TemplateSet | None = None, cutoff: dt.date | None = None) -> PValueGrid:
    """Compare forecasts across current dates around the release date.

    Statistics values come from each statistics date and stay fixed along a
    column; the period labels follow each row's current date. Every row is
    compared against the ``baseline`` row of its column.
    """
    cutoff = cutoff or config.scan_cutoff
    rows = scan_rows(cutoff, horizon_end)
    if baseline not in rows:
        raise ValueError(f"baseline {baseline} is not a scan row between {cutoff} and {horizon_end}")
    columns = tuple((v, s) for v in config.variables for s in statistics_dates)
    matrix = [[1.0] * len(columns) for _ in rows]
    samples = {}
    for j, (variable, sdate) in enumerate(columns):
        snapshot = snapshot_at(sdate, store)
        dists, prompts = {}, {}
        for row in rows:
            comp = PromptComponents(t_current=row, t_forecast=add_months(row, config.h), t_cutoff=cutoff,
                                    variable=variable, snapshot=snapshot.relabeled(row))
            try:
                dists[row] = _sample_condition(comp, config, gate, templates).sample()
            except FakeDateError as exc:
                raise CellError(row, variable, exc) from exc
            prompts[row] = render_prompt(comp, templates)
        base = dists[baseline]
        for i, row in enumerate(rows):
            if row == baseline:
                continue
            seed = comparison_seed(config.master_seed, prompts[row], prompts[baseline])
            matrix[i][j] = compare(dists[row], base, config.n_perm, seed, config.statistic).p_value
        samples[(variable, sdate)] = dists
    return PValueGrid(tuple(rows), columns, tuple(tuple(r) for r in matrix), baseline, cutoff,
                      config.model_id, samples)


@dataclasses.dataclass(frozen=True)
class Flag:
    model: str
    variable: VariableKind
    statistics_date: dt.date
    share: float

    def label(self) -> str:
        return f"{self.variable.value}@{self.statistics_date.isoformat()}"


def triple_screen(grid: PValueGrid, threshold: float = 0.001, fraction: float = 0.10,
                  burn_in: int = 36) -> list[Flag]:
    """Flag columns whose post-burn-in rows fall below ``threshold`` often enough.

    A cell counts when its p-value is strictly below ``threshold``; a column is
    flagged when the share of such cells among rows at least ``burn_in`` months
    after the cutoff reaches ``fraction``.
    """
    start = add_months(grid.cutoff, burn_in)
    eligible = [i for i, r in enumerate(grid.rows) if r >= start]
    if not eligible:
        raise InsufficientRows(f"no grid rows on or after {start}")
    flags = []
    for j, (variable, sdate) in enumerate(grid.columns):
        hits = sum(grid.cells[i][j] < threshold for i in eligible)
        share = hits / len(eligible)
        if share >= fraction:
            flags.append(Flag(grid.model, variable, sdate, share))
    return flags


def max_wasserstein_pair(scan_samples: Mapping[dt.date, Sample], burn_in: int = 36,
                         cutoff: dt.date | None = None) -> tuple[dt.date, dt.date, float]:
    """Pair of post-burn-in rows whose forecast distributions are furthest apart."""
    if not scan_samples:
        raise InsufficientRows("no rows")
    cutoff = cutoff or min(scan_samples)
    start = add_months(cutoff, burn_in)
    rows = sorted(r for r in scan_samples if r >= start)
    if len(rows) < 2:
        raise InsufficientRows(f"need two rows on or after {start}, have {len(rows)}")
    best = None
    for a, b in itertools.combinations(rows, 2):
        w = wasserstein(scan_samples[a], scan_samples[b])
        if best is None or w > best[2]:
            best = (a, b, w)
    return best
