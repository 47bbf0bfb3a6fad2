import datetime as dt
import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from fakedate.domain import VariableKind
from fakedate.errors import EmptyGrid
from fakedate.report import (
    bin_index,
    bubble_histogram,
    emit_pvalue_table,
    plot_bubbles,
    plot_pvalue_grid,
    plot_pvalues,
    write_bubble_meta_csv,
    write_bubbles_csv,
    write_results_csv,
)
from fakedate.stats import ComparisonResult
from fakedate.testkit import CellResult, DistributionSummary, PValueGrid, TestOutcome

RATE, CPI = VariableKind.FED_RATE_LOWER_BOUND, VariableKind.CPI_YOY
D = dt.date(2013, 8, 15)


def _outcome(real, fake, variable=RATE, na=0):
    cmp = ComparisonResult(0.1, 0.5, 0.2, len(real) + na, len(fake), 100, 0, na, 0)
    cell = CellResult(D, variable, dt.date(2030, 2, 15), dt.date(2014, 8, 15), cmp,
                      DistributionSummary(len(real) + na, tuple(real), explicit_na=na),
                      DistributionSummary(len(fake), tuple(fake)))
    return TestOutcome("I", (cell,), {variable: 0.5}, 0.5, "Pass", 0.05, 36)


values = st.lists(st.floats(-5, 10, allow_nan=False).map(lambda x: round(x, 2)), min_size=1, max_size=60)


@settings(max_examples=60, deadline=None)
@given(values, values, st.integers(0, 5))
def test_bubble_densities_sum_to_one(real, fake, na):
    series = bubble_histogram(_outcome(real, fake, na=na))
    for cond, src in (("real", real), ("fake", fake)):
        bs = [b for b in series.bubbles if b.condition == cond]
        assert math.isclose(sum(b.density for b in bs), 1.0)
        assert sum(b.count for b in bs) == len(src)
        # re-binning the raw values reproduces the bubbles exactly
        counts = Counter(bin_index(v, 0.25) for v in src)
        assert {round(k * 0.25, 10): n for k, n in counts.items()} == {b.bin_center: b.count for b in bs}
    assert series.refusals[(D, RATE, "real")] == na


def test_point_mass_is_one_bubble():
    series = bubble_histogram(_outcome([2.5] * 100, [2.5] * 100))
    assert [(b.bin_center, b.density) for b in series.bubbles] == [(2.5, 1.0), (2.5, 1.0)]


@pytest.mark.parametrize("value,width,center", [(2.5, 0.25, 2.5), (2.62, 0.25, 2.5), (2.63, 0.25, 2.75),
                                                (-0.8, 0.1, -0.8), (3.04, 0.1, 3.0), (3.05, 0.1, 3.1)])
def test_bin_lattice(value, width, center):
    assert round(bin_index(value, width) * width, 10) == center


def test_empty_outcome_raises():
    out = TestOutcome("I", (), {}, 1.0, "Pass", 0.05, 36)
    with pytest.raises(EmptyGrid):
        bubble_histogram(out)


def test_realized_values_from_store(store):
    series = bubble_histogram(_outcome([0.25], [0.25]), store=store)
    assert series.realized[(D, RATE)] == store.snapshot_at(dt.date(2014, 8, 15)).value_of(RATE)


def _grid(cells, rows=(dt.date(2030, 2, 15), dt.date(2030, 5, 15))):
    return PValueGrid(tuple(rows), ((RATE, dt.date(2008, 11, 15)),), tuple(cells), dt.date(2030, 2, 15),
                      dt.date(2025, 8, 15))


def test_pvalue_table_format(tmp_path):
    p = emit_pvalue_table(_grid([(1.0,), (0.75,)]), tmp_path / "g.csv")
    assert p.read_text().splitlines() == ["horizon_date,rate@2008-11-15", "2030-02-15,1.000", "2030-05-15,0.750"]


def test_empty_pvalue_table_writes_nothing(tmp_path):
    empty = PValueGrid((), (), (), dt.date(2030, 2, 15), dt.date(2025, 8, 15))
    with pytest.raises(EmptyGrid):
        emit_pvalue_table(empty, tmp_path / "g.csv")
    assert not (tmp_path / "g.csv").exists()


def test_csv_writers(tmp_path, store):
    out = _outcome([2.5, 2.75], [3.0], na=1)
    series = bubble_histogram(out, store=store)
    rows = write_results_csv(out, tmp_path / "r.csv").read_text().splitlines()
    assert rows[0].startswith("date,variable,t_fake") and rows[1].startswith("2013-08-15,rate,2030-02-15")
    bub = write_bubbles_csv(series, tmp_path / "b.csv").read_text().splitlines()
    assert bub[1:] == ["2013-08-15,rate,real,2.5000,1,0.5", "2013-08-15,rate,real,2.7500,1,0.5",
                       "2013-08-15,rate,fake,3.0000,1,1.0"]
    meta = write_bubble_meta_csv(series, tmp_path / "m.csv").read_text().splitlines()
    assert meta[1].startswith("2013-08-15,rate,1,0,")


def test_svgs_are_deterministic(tmp_path, store):
    out = _outcome([2.5, 2.75, 2.5], [3.0, 3.25])
    series = bubble_histogram(out, store=store)
    for sub in ("a", "b"):
        d = tmp_path / sub
        d.mkdir()
        plot_bubbles(series, RATE, d / "bubbles.svg")
        plot_pvalues(out, d / "p.svg")
        plot_pvalue_grid(_grid([(1.0,), (0.0005,)]), d / "grid.svg")
    for name in ("bubbles.svg", "p.svg", "grid.svg"):
        a = (tmp_path / "a" / name).read_bytes()
        assert a == (tmp_path / "b" / name).read_bytes()
        assert a.startswith(b"<?xml") and b"<dc:date>" not in a
