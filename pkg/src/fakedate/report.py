"""Tables and figures: bubble histograms, result CSVs, p-value tables, SVG plots."""

from __future__ import annotations

import csv
import dataclasses
import datetime as dt
import math
from collections import Counter
from pathlib import Path
from typing import Mapping

import matplotlib
from matplotlib.figure import Figure

from .dataio import VintageStore, snapshot_at
from .domain import VariableKind
from .errors import EmptyGrid, FakeDateError
from .testkit import PValueGrid, TestOutcome

DEFAULT_BIN_WIDTHS = {
    VariableKind.FED_RATE_LOWER_BOUND: 0.25,
    VariableKind.CPI_YOY: 0.1,
    VariableKind.GDP_YOY: 0.1,
}

CONDITIONS = ("real", "fake")

_SVG_META = {"Date": None, "Creator": "fakedate"}
_RC = {"svg.hashsalt": "fakedate", "svg.fonttype": "none"}


@dataclasses.dataclass(frozen=True)
class Bubble:
    date: dt.date
    variable: VariableKind
    condition: str
    bin_center: float
    count: int
    density: float


@dataclasses.dataclass(frozen=True)
class BubbleSeries:
    bubbles: tuple[Bubble, ...]
    refusals: dict  # (date, variable, condition) -> count
    realized: dict  # (date, variable) -> realized value or None
    bin_widths: dict

    def for_variable(self, variable: VariableKind) -> list[Bubble]:
        return [b for b in self.bubbles if b.variable is variable]


def bin_index(value: float, width: float) -> int:
    """Index of the lattice bin ``[k w - w/2, k w + w/2)`` holding ``value``."""
    return math.floor(value / width + 0.5 + 1e-9)


def realized_value(store: VintageStore, variable: VariableKind, target: dt.date) -> float | None:
    """Value of ``variable`` as published by ``target``, if the data reach that far."""
    try:
        snap = snapshot_at(target, store)
    except FakeDateError:
        return None
    if not snap.labels_consistent_with(target):
        return None
    return snap.value_of(variable)


def bubble_histogram(outcome: TestOutcome, bin_width_by_variable: Mapping | None = None,
                     store: VintageStore | None = None) -> BubbleSeries:
    if not outcome.cells:
        raise EmptyGrid("outcome has no cells")
    widths = dict(DEFAULT_BIN_WIDTHS)
    widths.update(bin_width_by_variable or {})
    bubbles, refusals, realized = [], {}, {}
    for cell in outcome.cells:
        w = widths[cell.variable]
        for cond, dist in zip(CONDITIONS, (cell.real, cell.fake)):
            refusals[(cell.date, cell.variable, cond)] = dist.refusals
            counts = Counter(bin_index(v, w) for v in dist.values)
            total = sum(counts.values())
            for k in sorted(counts):
                bubbles.append(Bubble(cell.date, cell.variable, cond, round(k * w, 10), counts[k],
                                      counts[k] / total))
        if store is not None:
            realized[(cell.date, cell.variable)] = realized_value(store, cell.variable, cell.target)
    return BubbleSeries(tuple(bubbles), refusals, realized, widths)


def write_results_csv(outcome: TestOutcome, path) -> Path:
    path = Path(path)
    fields = ["date", "variable", "t_fake", "ks_stat", "p_value", "wasserstein", "n_real", "n_fake",
              "refusals_real", "refusals_fake", "mean_real", "mean_fake", "n_perm", "refined"]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for c in outcome.cells:
            cmp = c.comparison
            w.writerow([
                c.date.isoformat(), c.variable.value, c.t_fake.isoformat(), f"{cmp.ks_stat:.6f}",
                f"{cmp.p_value:.6g}", f"{cmp.wasserstein:.6f}", c.real.n, c.fake.n, c.real.refusals,
                c.fake.refusals, _fmt(c.real.mean), _fmt(c.fake.mean), cmp.n_perm, int(c.refined),
            ])
    return path


def _fmt(x) -> str:
    return "" if x is None else f"{x:.6f}"


def write_bubbles_csv(series: BubbleSeries, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "variable", "condition", "bin_center", "count", "density"])
        for b in series.bubbles:
            w.writerow([b.date.isoformat(), b.variable.value, b.condition, f"{b.bin_center:.4f}", b.count,
                        repr(b.density)])
    return path


def write_bubble_meta_csv(series: BubbleSeries, path) -> Path:
    path = Path(path)
    keys = sorted({(d, v) for d, v, _ in series.refusals}, key=lambda k: (k[0], k[1].value))
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "variable", "refusals_real", "refusals_fake", "realized"])
        for d, v in keys:
            r = series.realized.get((d, v))
            w.writerow([d.isoformat(), v.value, series.refusals[(d, v, "real")], series.refusals[(d, v, "fake")],
                        "" if r is None else f"{r:.1f}"])
    return path


def emit_pvalue_table(grid: PValueGrid, path) -> Path:
    """Grid as CSV: one row per horizon date, cells to three decimals."""
    if grid.is_empty():
        raise EmptyGrid("p-value grid has no rows or columns")
    path = Path(path)
    header = ["horizon_date"] + [f"{v.value}@{d.isoformat()}" for v, d in grid.columns]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, cells in zip(grid.rows, grid.cells):
            w.writerow([row.isoformat()] + [f"{p:.3f}" for p in cells])
    return path


# figures ----------------------------------------------------------------

def _save(fig: Figure, path) -> Path:
    path = Path(path)
    with matplotlib.rc_context(_RC):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    return path


def plot_bubbles(series: BubbleSeries, variable: VariableKind, path) -> Path:
    """Forecast densities per date: real dates in blue, fake dates in red,
    published values in yellow; marker area follows the density."""
    fig = Figure(figsize=(11, 4.5))
    ax = fig.add_subplot()
    offset = {"real": -20, "fake": 20}
    colors = {"real": "tab:blue", "fake": "tab:red"}
    for cond in CONDITIONS:
        pts = [b for b in series.for_variable(variable) if b.condition == cond]
        if pts:
            ax.scatter([b.date + dt.timedelta(days=offset[cond]) for b in pts], [b.bin_center for b in pts],
                       s=[4 + 120 * b.density for b in pts], c=colors[cond], alpha=0.55, linewidths=0,
                       label=f"{cond} date")
    real = sorted((d, r) for (d, v), r in series.realized.items() if v is variable and r is not None)
    if real:
        ax.plot([d for d, _ in real], [r for _, r in real], color="gold", lw=1.5, label="published")
    ax.set_title(variable.label)
    ax.set_ylabel("forecast, %")
    ax.legend(loc="best", fontsize=8)
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_pvalues(outcome: TestOutcome, path) -> Path:
    fig = Figure(figsize=(11, 4))
    ax = fig.add_subplot()
    for v in outcome.family_p:
        cells = sorted((c for c in outcome.cells if c.variable is v), key=lambda c: c.date)
        ax.plot([c.date for c in cells], [c.comparison.p_value for c in cells], marker="o", ms=3, lw=0.8,
                label=v.label)
    m = max(1, len(outcome.cells) // max(1, len(outcome.family_p)))
    ax.axhline(outcome.alpha / m, color="grey", ls="--", lw=0.8, label=f"alpha / {m}")
    ax.set_yscale("log")
    ax.set_ylabel("permutation p-value")
    ax.set_title(f"Fake date test {outcome.test}: {outcome.decision} (global p = {outcome.global_p:.3g})")
    ax.legend(loc="best", fontsize=8)
    fig.autofmt_xdate()
    return _save(fig, path)


def plot_pvalue_grid(grid: PValueGrid, path) -> Path:
    if grid.is_empty():
        raise EmptyGrid("p-value grid has no rows or columns")
    fig = Figure(figsize=(1.2 + 0.6 * len(grid.columns), 1.5 + 0.18 * len(grid.rows)))
    ax = fig.add_subplot()
    im = ax.imshow(grid.cells, aspect="auto", cmap="viridis", vmin=0, vmax=1, interpolation="nearest")
    ax.set_xticks(range(len(grid.columns)))
    ax.set_xticklabels([f"{v.value}@{d:%Y-%m}" for v, d in grid.columns], rotation=90, fontsize=7)
    ax.set_yticks(range(len(grid.rows)))
    ax.set_yticklabels([r.isoformat() for r in grid.rows], fontsize=6)
    ax.set_title(f"p-values against {grid.baseline.isoformat()}", fontsize=9)
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    return _save(fig, path)
