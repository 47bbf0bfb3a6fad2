import dataclasses
import datetime as dt
import math

import numpy as np
import pytest

from conftest import FIXTURES
from fakedate.dataio import quarterly_grid
from fakedate.domain import VariableKind
from fakedate.errors import CellError, InsufficientRows, ReplayMiss
from fakedate.modelgate import ReplayGate, ResponseCache, SimulatedGate, SimulatedGateSpec
from fakedate.promptkit import fake_prompt, real_prompt
from fakedate.stats import Sample, wasserstein
from fakedate.testkit import (
    FAIL,
    PASS,
    STATISTICS_DATES_PRESET,
    PValueGrid,
    RunConfig,
    TestOutcome,
    assumption2_scan,
    fake_date_test_I,
    fake_date_test_II,
    family_test,
    load_pvalue_grid,
    max_wasserstein_pair,
    triple_screen,
)

RATE, CPI, GDP = VariableKind.FED_RATE_LOWER_BOUND, VariableKind.CPI_YOY, VariableKind.GDP_YOY
FAST = RunConfig(variables=(RATE,), n_samples=40, n_perm=300, refine_n_perm=0)


class CountingGate(SimulatedGate):
    def __init__(self, *a, **kw):
        super().__init__(*a, **kw)
        self.prompts = {}

    def complete(self, request, seed=0):
        self.prompts.setdefault(request.prompt, set()).add(request.sample_index)
        return super().complete(request, seed)


def test_config_defaults():
    c = RunConfig()
    assert (c.n_samples, c.temperature, c.h, c.d, c.fake_date, c.n_perm, c.alpha) == (
        100, 0.7, 12, 36, dt.date(2030, 2, 15), 10_000, 0.05)
    assert len(quarterly_grid(c.grid_start, c.grid_end)) == 80
    assert RunConfig.from_dict(c.to_dict()) == c


@pytest.mark.parametrize("bad", [{"alpha": 0}, {"alpha": 1}, {"n_samples": 0}, {"n_perm": 0}, {"d": -1}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        RunConfig(**bad)


def test_config_unknown_key():
    with pytest.raises(ValueError):
        RunConfig.from_dict({"nsamples": 10})


def test_default_run_samples_every_cell(store):
    gate = CountingGate()
    cfg = RunConfig(n_perm=200)
    out = fake_date_test_I(cfg, gate, store)
    assert len(gate.prompts) == 80 * 3 * 2
    assert all(idx == set(range(100)) for idx in gate.prompts.values())
    assert len(out.cells) == 240
    assert {c.date for c in out.cells} == set(quarterly_grid(cfg.grid_start, cfg.grid_end))
    for c in out.cells:
        assert c.real.n == c.fake.n == 100
        assert c.comparison.n_a == c.comparison.n_b == 100


def test_decision_rule(store):
    out = fake_date_test_I(FAST, SimulatedGate(), store)
    assert (out.decision == FAIL) == (out.global_p <= out.alpha)
    assert out.global_p == min(1.0, len(out.family_p) * min(out.family_p.values()))


def test_lookahead_fails_and_refines(store):
    cfg = dataclasses.replace(FAST, n_samples=100, n_perm=1000, refine_n_perm=20_000)
    out = fake_date_test_I(cfg, SimulatedGate(SimulatedGateSpec(mode="lookahead")), store)
    assert out.decision == FAIL
    refined = [c for c in out.cells if c.refined]
    assert len(refined) == 1 and refined[0].comparison.n_perm == 20_000
    assert out.global_p == pytest.approx(80 / 20_001)


def test_determinism(store):
    gate = SimulatedGate(SimulatedGateSpec(mode="lookahead", refusal_rate=0.1))
    a = fake_date_test_I(FAST, gate, store)
    b = fake_date_test_I(FAST, gate, store)
    assert a.digest() == b.digest()
    assert a.digest() != fake_date_test_I(dataclasses.replace(FAST, master_seed=1), gate, store).digest()


def test_outcome_json_round_trip(store):
    out = fake_date_test_I(FAST, SimulatedGate(SimulatedGateSpec(refusal_rate=0.1)), store)
    back = TestOutcome.from_dict(out.as_dict())
    assert back.digest() == out.digest()


def test_refusals_are_counted(store):
    out = fake_date_test_I(FAST, SimulatedGate(SimulatedGateSpec(refusal_rate=0.3)), store)
    c = out.cells[0]
    assert c.real.explicit_na > 0 and c.comparison.refusals_a == c.real.refusals
    assert c.comparison.n_a == c.real.n == 40


def test_test_one_needs_positive_d(store):
    with pytest.raises(ValueError):
        fake_date_test_I(dataclasses.replace(FAST, d=0), SimulatedGate(), store)


def test_test_two_forces_d_zero(store):
    out = fake_date_test_II(FAST, SimulatedGate(), store, dates=[dt.date(2005, 5, 15)])
    assert out.d == 0 and out.meta["d_requested"] == 36


def test_test_two_date_sensitive(store):
    gate = SimulatedGate(SimulatedGateSpec(mode="date", leak_shift=1.0, noise_sd=0.25))
    cfg = dataclasses.replace(FAST, n_samples=100, n_perm=2000, refine_n_perm=100_000)
    assert fake_date_test_II(cfg, gate, store).decision == FAIL
    # with a seasonal fake date the month, and hence the injected effect, is unchanged
    assert fake_date_test_II(dataclasses.replace(cfg, seasonal=True), gate, store).decision == PASS
    assert fake_date_test_II(cfg, SimulatedGate(), store).decision == PASS


def test_seasonal_fake_dates_recorded(store):
    cfg = dataclasses.replace(FAST, seasonal=True)
    out = fake_date_test_I(cfg, SimulatedGate(), store, dates=[dt.date(2013, 8, 15)])
    assert out.cells[0].t_fake == dt.date(2030, 8, 15)


def test_failed_cell_aborts_or_is_skipped(store, tmp_path):
    cache = ResponseCache(tmp_path / "c.jsonl")
    dates = [dt.date(2005, 5, 15), dt.date(2005, 8, 15)]
    fake_date_test_I(FAST, SimulatedGate(cache=cache), store, dates=dates[:1])
    with pytest.raises(CellError) as info:
        fake_date_test_I(FAST, ReplayGate(cache), store, dates=dates)
    assert info.value.date == dates[1] and info.value.variable is RATE
    out = fake_date_test_I(dataclasses.replace(FAST, keep_going=True), ReplayGate(cache), store, dates=dates)
    assert [c.date for c in out.cells] == dates[:1]
    assert len(out.errors) == 1 and not out.complete
    assert isinstance(out.errors[0].cause.failed[0], ReplayMiss)


# family test ----------------------------------------------------------------

def test_family_of_two_reduces_to_test_one(store):
    d = dt.date(2005, 5, 15)
    cfg = dataclasses.replace(FAST, master_seed=3)
    out = fake_date_test_I(cfg, SimulatedGate(), store, dates=[d])
    real = real_prompt(d, 12, 36, RATE, store.snapshot_at(d))
    fam = family_test([real, fake_prompt(real, cfg.fake_date)], SimulatedGate(), n_perm=cfg.n_perm, seed=3,
                      n_samples=cfg.n_samples)
    assert fam.matrix[0][1] == out.cells[0].comparison


def test_family_matrix_structure(store):
    d = dt.date(2008, 11, 15)
    real = real_prompt(d, 12, 36, RATE, store.snapshot_at(d))
    variants = [real] + [fake_prompt(real, dt.date(y, 2, 15)) for y in (2030, 2031)]
    fam = family_test(variants, SimulatedGate(), n_perm=200, n_samples=30)
    for i in range(3):
        assert fam.matrix[i][i].p_value == 1.0 and fam.matrix[i][i].ks_stat == 0.0
        for j in range(3):
            assert fam.matrix[i][j] is fam.matrix[j][i]
    assert len(fam.p_values()) == 3
    with pytest.raises(ValueError):
        family_test(variants[:1], SimulatedGate())


def test_family_null_on_unbiased_gate(store):
    d = dt.date(2008, 11, 15)
    real = real_prompt(d, 12, 36, RATE, store.snapshot_at(d))
    identical = family_test([real] * 3, SimulatedGate(), n_perm=500, n_samples=100)
    assert min(identical.p_values()) > 0.001
    # variants that differ only in dates: the null holds, so small p-values are rare
    variants = [fake_prompt(real, dt.date(y, 2, 15)) for y in (2030, 2032, 2034)]
    reps = 100
    ok = sum(min(family_test(variants, SimulatedGate(), n_perm=2000, n_samples=100, seed=r).p_values()) > 0.001
             for r in range(reps))
    assert ok >= 0.99 * reps


# null rejection rates -------------------------------------------------------------

@pytest.mark.parametrize("runner", [fake_date_test_I, fake_date_test_II])
def test_per_date_rejection_rate_on_unbiased_gate(store, runner):
    alpha, reps = 0.05, 200
    cfg = RunConfig(variables=(RATE,), n_perm=1000, refine_n_perm=0)
    rejections = 0
    for r in range(reps):
        out = runner(dataclasses.replace(cfg, master_seed=r), SimulatedGate(), store, dates=[dt.date(2013, 8, 15)])
        rejections += out.cells[0].comparison.p_value <= alpha
    assert rejections / reps <= alpha + 3 * math.sqrt(alpha * (1 - alpha) / reps)


# scan and screen --------------------------------------------------------------

def test_scan_grid_shape_and_baseline(store):
    cfg = dataclasses.replace(FAST, variables=(RATE, GDP))
    dates = STATISTICS_DATES_PRESET[:2]
    grid = assumption2_scan(cfg, dates, dt.date(2035, 11, 15), dt.date(2030, 2, 15), SimulatedGate(), store)
    assert len(grid.rows) == 42
    assert grid.rows[0] == dt.date(2025, 8, 15) and grid.rows[-1] == dt.date(2035, 11, 15)
    assert grid.columns == ((RATE, dates[0]), (RATE, dates[1]), (GDP, dates[0]), (GDP, dates[1]))
    assert grid.cells[grid.rows.index(dt.date(2030, 2, 15))] == (1.0,) * 4
    assert set(grid.samples[(RATE, dates[0])]) == set(grid.rows)


def test_scan_baseline_must_be_a_row(store):
    with pytest.raises(ValueError):
        assumption2_scan(FAST, STATISTICS_DATES_PRESET[:1], dt.date(2035, 11, 15), dt.date(2030, 3, 15),
                         SimulatedGate(), store)


def test_scan_null_on_unbiased_gate(store):
    cfg = RunConfig(n_perm=1000, master_seed=4)
    grid = assumption2_scan(cfg, STATISTICS_DATES_PRESET, dt.date(2035, 11, 15), dt.date(2030, 2, 15),
                            SimulatedGate(), store)
    cells = np.array([p for row, r in zip(grid.rows, grid.cells) if row != grid.baseline for p in r])
    share = np.mean(cells <= 0.05)
    assert share <= 0.05 + 3 * math.sqrt(0.05 * 0.95 / cells.size)


def _fixture(name):
    return load_pvalue_grid(FIXTURES / "pvalue_grids" / f"{name}.csv")


@pytest.mark.parametrize("name,count", [("kimi-k2", 0), ("deepseek-v3.1", 3), ("qwen3", 7)])
def test_triple_screen_on_published_tables(name, count):
    grid = _fixture(name)
    assert len(grid.rows) == 42 and len(grid.columns) == 15
    assert len(triple_screen(grid, 0.001, 0.10, 36)) == count


def test_triple_screen_deepseek_labels():
    labels = {f.label() for f in triple_screen(_fixture("deepseek-v3.1"))}
    assert labels == {"rate@2008-11-15", "gdp@2008-11-15", "rate@2021-08-15"}


def test_triple_screen_burn_in_and_threshold():
    rows = tuple(quarterly_grid(dt.date(2025, 8, 15), dt.date(2035, 11, 15)))
    # zeros only inside the burn-in window are ignored
    cells = tuple((0.0,) if r < dt.date(2028, 8, 15) else (0.5,) for r in rows)
    cells = tuple((1.0,) if r == dt.date(2030, 2, 15) else c for r, c in zip(rows, cells))
    grid = PValueGrid(rows, ((RATE, dt.date(2008, 11, 15)),), cells, dt.date(2030, 2, 15), dt.date(2025, 8, 15))
    assert triple_screen(grid) == []
    assert len(triple_screen(grid, burn_in=0)) == 1
    # three of thirty post-burn-in cells strictly below the threshold reach the 10% share
    low = {dt.date(2029, 2, 15), dt.date(2031, 5, 15), dt.date(2033, 8, 15)}
    cells = tuple((0.0009,) if r in low else (1.0,) if r == dt.date(2030, 2, 15) else (0.5,) for r in rows)
    grid = dataclasses.replace(grid, cells=cells)
    assert [round(f.share, 3) for f in triple_screen(grid)] == [0.1]
    cells = tuple((0.001,) if r in low else c for r, c in zip(rows, cells))
    assert triple_screen(dataclasses.replace(grid, cells=cells)) == []


def test_grid_loader_accepts_decimal_commas(tmp_path):
    src = (FIXTURES / "pvalue_grids" / "kimi-k2.csv").read_text().splitlines()
    semi = [src[0].replace(",", ";")] + [ln.replace(",", ";").replace(".", ",") for ln in src[1:]]
    p = tmp_path / "kimi-k2.csv"
    p.write_text("\n".join(semi) + "\n")
    assert load_pvalue_grid(p).cells == _fixture("kimi-k2").cells


def test_grid_baseline_invariant():
    with pytest.raises(ValueError):
        PValueGrid((dt.date(2030, 2, 15),), ((RATE, dt.date(2008, 11, 15)),), ((0.5,),), dt.date(2030, 2, 15),
                   dt.date(2025, 8, 15))


# max Wasserstein pair ----------------------------------------------------------

ROWS = [dt.date(2028, 8, 15), dt.date(2028, 11, 15), dt.date(2029, 2, 15)]


def test_max_wasserstein_identical_rows():
    s = Sample((1.0, 2.0, 3.0))
    a, b, w = max_wasserstein_pair({ROWS[0]: s, ROWS[1]: s}, burn_in=0)
    assert w == 0.0 and {a, b} == set(ROWS[:2])


def test_max_wasserstein_picks_far_apart_rows():
    rng = np.random.default_rng(0)
    noise = rng.normal(size=200)
    rows = {r: Sample(tuple(mu + noise)) for r, mu in zip(ROWS, (0.0, 0.0, 5.0))}
    a, b, w = max_wasserstein_pair(rows, burn_in=0)
    assert ROWS[2] in (a, b)
    assert w == wasserstein(rows[a], rows[b]) == pytest.approx(5.0)


def test_max_wasserstein_respects_burn_in():
    rows = {r: Sample((float(i),)) for i, r in enumerate(ROWS)}
    with pytest.raises(InsufficientRows):
        max_wasserstein_pair(rows, burn_in=6, cutoff=dt.date(2028, 8, 15))
    a, b, _ = max_wasserstein_pair(rows, burn_in=3, cutoff=dt.date(2028, 8, 15))
    assert (a, b) == (ROWS[1], ROWS[2])
