"""Command-line entry point.

Exit status: 0 protocol Pass (or success for non-test commands), 1 protocol
Fail, 2 operational or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as dt
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .dataio import VintageStore
from .domain import VariableKind
from .errors import FakeDateError
from .modelgate import LiveGate, ReplayGate, ResponseCache, SimulatedGate, SimulatedGateSpec
from .report import (
    bubble_histogram,
    emit_pvalue_table,
    plot_bubbles,
    plot_pvalue_grid,
    plot_pvalues,
    write_bubble_meta_csv,
    write_bubbles_csv,
    write_results_csv,
)
from .testkit import (
    FAIL,
    RunConfig,
    TestOutcome,
    assumption2_scan,
    fake_date_test_I,
    fake_date_test_II,
    load_pvalue_grid,
    triple_screen,
)

log = logging.getLogger("fakedate")

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

GATES = ("live", "simulated-unbiased", "simulated-lookahead", "simulated-date", "replay")
_SIM_MODES = {"simulated-unbiased": "unbiased", "simulated-lookahead": "lookahead", "simulated-date": "date"}

# flag dest -> RunConfig field
_CONFIG_FLAGS = {
    "n": "n_samples",
    "temperature": "temperature",
    "h": "h",
    "d": "d",
    "fake_date": "fake_date",
    "seasonal": "seasonal",
    "n_perm": "n_perm",
    "refine_n_perm": "refine_n_perm",
    "alpha": "alpha",
    "seed": "master_seed",
    "model": "model_id",
    "gate": "gate",
    "keep_going": "keep_going",
    "variables": "variables",
    "grid_start": "grid_start",
    "grid_end": "grid_end",
}
_SIM_FLAGS = ("leak_shift", "noise_sd", "knowledge_horizon", "refusal_rate")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _variables(text: str) -> tuple[VariableKind, ...]:
    try:
        return tuple(VariableKind.parse(t) for t in text.split(",") if t.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _run_flags(p: argparse.ArgumentParser, with_gate=True):
    p.add_argument("--config", type=Path, help="YAML file with run settings")
    p.add_argument("--out", type=Path, default=Path("fakedate-out"), help="output directory")
    p.add_argument("--data", type=Path, help="directory with rate.csv, cpi.csv, gdp.csv (default: bundled)")
    p.add_argument("--n", type=int, help="samples per prompt condition")
    p.add_argument("--temperature", type=float)
    p.add_argument("--h", type=int, help="forecast horizon in months")
    p.add_argument("--d", type=int, help="cutoff depth in months")
    p.add_argument("--fake-date", type=_date)
    p.add_argument("--seasonal", action="store_true", default=None,
                   help="fake date keeps the real date's month and day")
    p.add_argument("--n-perm", type=int)
    p.add_argument("--refine-n-perm", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--variables", type=_variables, help="comma list of rate,cpi,gdp")
    p.add_argument("--grid-start", type=_date)
    p.add_argument("--grid-end", type=_date)
    p.add_argument("--keep-going", action="store_true", default=None)
    if with_gate:
        p.add_argument("--gate", choices=GATES)
        p.add_argument("--model")
        p.add_argument("--endpoint")
        p.add_argument("--concurrency", type=int)
        p.add_argument("--max-tokens", type=int)
        p.add_argument("--cache", type=Path, help="JSONL response cache")
        p.add_argument("--leak-shift", type=float)
        p.add_argument("--noise-sd", type=float)
        p.add_argument("--knowledge-horizon", type=_date)
        p.add_argument("--refusal-rate", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fakedate", description="Fake date tests for lookahead and context bias.")
    parser.add_argument("--version", action="version", version=f"fakedate {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("test1", "fake date test I (cutoff d months back)"),
                        ("test2", "fake date test II (cutoff at the real date)")):
        _run_flags(sub.add_parser(name, help=help_))

    scan = sub.add_parser("scan", help="compare forecasts across current dates near the release date")
    _run_flags(scan)
    scan.add_argument("--statistics-dates", help="comma list of YYYY-MM-DD (default: preset of five)")
    scan.add_argument("--scan-cutoff", type=_date)
    scan.add_argument("--horizon-end", type=_date)
    scan.add_argument("--baseline", type=_date)

    screen = sub.add_parser("screen", help="flag (model, variable, statistics date) triples in p-value grids")
    screen.add_argument("--fixtures", type=Path, nargs="+", required=True,
                        help="grid CSV files or directories of them")
    screen.add_argument("--threshold", type=float, default=0.001)
    screen.add_argument("--fraction", type=float, default=0.10)
    screen.add_argument("--burn-in", type=int, default=36, help="months after the cutoff")
    screen.add_argument("--cutoff", type=_date, default=dt.date(2025, 8, 15))
    screen.add_argument("--baseline", type=_date, default=dt.date(2030, 2, 15))

    report = sub.add_parser("report", help="re-render tables and figures from a saved outcome.json")
    report.add_argument("outcome", type=Path)
    report.add_argument("--out", type=Path)
    report.add_argument("--data", type=Path)

    replay = sub.add_parser("replay", help="re-run a recorded test from its manifest and response cache")
    replay.add_argument("manifest", type=Path, help="manifest.jsonl (last line is used)")
    replay.add_argument("--cache", type=Path, help="override the cache path stored in the manifest")
    replay.add_argument("--out", type=Path)
    return parser


# configuration -------------------------------------------------------------

def _load_yaml(path: Path | None) -> dict:
    if path is None:
        return {}
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a mapping at top level")
    return data


def resolve(args) -> tuple[RunConfig, dict]:
    """RunConfig plus gate settings from defaults, then the config file, then flags."""
    file_cfg = _load_yaml(args.config)
    gate_cfg = dict(file_cfg.pop("gate_options", {}) or {})
    for key in ("endpoint", "cache", "concurrency", "max_tokens", *_SIM_FLAGS):
        if key in file_cfg:
            gate_cfg[key] = file_cfg.pop(key)
    try:
        config = RunConfig.from_dict(file_cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config: {exc}") from None
    overrides = {}
    for flag, field in _CONFIG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            overrides[field] = v
    for key in ("endpoint", "cache", "concurrency", "max_tokens", *_SIM_FLAGS):
        v = getattr(args, key, None)
        if v is not None:
            gate_cfg[key] = v
    try:
        config = dataclasses.replace(config, **overrides)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if config.gate not in GATES:
        raise UsageError(f"unknown gate {config.gate!r}; expected one of {', '.join(GATES)}")
    if config.model_id == "model" and config.gate in _SIM_MODES:
        config = dataclasses.replace(config, model_id=f"{config.gate}-s{config.master_seed}")
    gate_cfg = {k: (v.isoformat() if isinstance(v, dt.date) else str(v) if isinstance(v, Path) else v)
                for k, v in gate_cfg.items()}
    return config, gate_cfg


def build_gate(config: RunConfig, gate_cfg: dict):
    cache = ResponseCache(gate_cfg["cache"]) if gate_cfg.get("cache") else None
    if config.gate in _SIM_MODES:
        spec_kw = {k: gate_cfg[k] for k in _SIM_FLAGS if k in gate_cfg}
        if "knowledge_horizon" in spec_kw:
            spec_kw["knowledge_horizon"] = dt.date.fromisoformat(str(spec_kw["knowledge_horizon"]))
        return SimulatedGate(SimulatedGateSpec(mode=_SIM_MODES[config.gate], **spec_kw), cache=cache)
    if cache is None:
        raise UsageError(f"--gate {config.gate} needs --cache")
    if config.gate == "replay":
        return ReplayGate(cache)
    if not gate_cfg.get("endpoint"):
        raise UsageError("--gate live needs --endpoint")
    if config.model_id == "model":
        raise UsageError("--gate live needs --model")
    kw = {k: gate_cfg[k] for k in ("concurrency", "max_tokens") if k in gate_cfg}
    return LiveGate(gate_cfg["endpoint"], cache, **kw)


def _store(data: Path | None) -> VintageStore:
    return VintageStore.from_dir(data) if data else VintageStore.bundled()


def _manifest(command: str, config: RunConfig, gate_cfg: dict, data, result: dict) -> dict:
    return {
        "command": command,
        "code_version": __version__,
        "config": config.to_dict(),
        "gate_options": gate_cfg,
        "cache": gate_cfg.get("cache"),
        "data": str(data) if data else "bundled",
        **result,
    }


def _append_manifest(out: Path, record: dict) -> None:
    with (out / "manifest.jsonl").open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


# commands --------------------------------------------------------------------

def write_outcome(outcome: TestOutcome, out: Path, store: VintageStore | None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "outcome.json").write_text(json.dumps(outcome.as_dict(), sort_keys=True, indent=1) + "\n",
                                      encoding="utf-8")
    write_results_csv(outcome, out / "results.csv")
    series = bubble_histogram(outcome, store=store)
    write_bubbles_csv(series, out / "bubbles.csv")
    write_bubble_meta_csv(series, out / "bubble_meta.csv")
    plot_pvalues(outcome, out / "pvalues.svg")
    for v in outcome.family_p:
        plot_bubbles(series, v, out / f"bubbles_{v.value}.svg")


def _print_outcome(outcome: TestOutcome) -> None:
    print(f"fake date test {outcome.test}: {outcome.decision} "
          f"(global p = {outcome.global_p:.6g}, alpha = {outcome.alpha})")
    for v, p in outcome.family_p.items():
        print(f"  {v.value}: Bonferroni p = {p:.6g}")
    for e in outcome.errors:
        print(f"  error: {e}")


def _exit_for(outcome: TestOutcome) -> int:
    if outcome.decision == FAIL:
        return EXIT_FAIL
    return EXIT_ERROR if outcome.errors else EXIT_PASS


def _run_test(command: str, config: RunConfig, gate_cfg: dict, data, out: Path) -> TestOutcome:
    store = _store(data)
    gate = build_gate(config, gate_cfg)
    run = fake_date_test_I if command == "test1" else fake_date_test_II
    outcome = run(config, gate, store)
    write_outcome(outcome, out, store)
    _append_manifest(out, _manifest(command, config, gate_cfg, data, {
        "outcome_digest": outcome.digest(), "decision": outcome.decision, "global_p": outcome.global_p}))
    return outcome


def cmd_test(args) -> int:
    config, gate_cfg = resolve(args)
    outcome = _run_test(args.command, config, gate_cfg, args.data, args.out)
    _print_outcome(outcome)
    return _exit_for(outcome)


def cmd_scan(args) -> int:
    config, gate_cfg = resolve(args)
    if args.statistics_dates:
        dates = tuple(_date(t.strip()) for t in args.statistics_dates.split(",") if t.strip())
        config = dataclasses.replace(config, statistics_dates=dates)
    for flag, field in (("scan_cutoff", "scan_cutoff"), ("horizon_end", "scan_horizon_end"),
                        ("baseline", "scan_baseline")):
        if getattr(args, flag) is not None:
            config = dataclasses.replace(config, **{field: getattr(args, flag)})
    store = _store(args.data)
    gate = build_gate(config, gate_cfg)
    grid = assumption2_scan(config, config.statistics_dates, config.scan_horizon_end, config.scan_baseline,
                            gate, store)
    args.out.mkdir(parents=True, exist_ok=True)
    emit_pvalue_table(grid, args.out / "pvalue_grid.csv")
    plot_pvalue_grid(grid, args.out / "pvalue_grid.svg")
    flags = triple_screen(grid)
    print(f"scan: {len(grid.rows)} rows x {len(grid.columns)} columns against {grid.baseline}")
    print(f"triple screen: {len(flags)} flag(s)" + "".join(f"\n  {f.label()}" for f in flags))
    _append_manifest(args.out, _manifest("scan", config, gate_cfg, args.data,
                                         {"flags": [f.label() for f in flags]}))
    return EXIT_PASS


def _grid_files(paths) -> list[Path]:
    files = []
    for p in paths:
        if p.is_dir():
            files.extend(sorted(p.glob("*.csv")))
        elif p.exists():
            files.append(p)
        else:
            raise UsageError(f"no such file or directory: {p}")
    if not files:
        raise UsageError("no grid CSV files found")
    return files


def cmd_screen(args) -> int:
    counts = []
    for f in _grid_files(args.fixtures):
        grid = load_pvalue_grid(f, baseline=args.baseline, cutoff=args.cutoff)
        flags = triple_screen(grid, args.threshold, args.fraction, args.burn_in)
        counts.append(str(len(flags)))
        print(f"{grid.model}: {len(flags)} flag(s)" + "".join(f"\n  {fl.label()}" for fl in flags))
    print("flag counts: " + " / ".join(counts))
    return EXIT_PASS


def cmd_report(args) -> int:
    outcome = TestOutcome.from_dict(json.loads(args.outcome.read_text(encoding="utf-8")))
    out = args.out or args.outcome.parent
    write_outcome(outcome, out, _store(args.data))
    _print_outcome(outcome)
    return EXIT_PASS


def cmd_replay(args) -> int:
    lines = [ln for ln in args.manifest.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise UsageError(f"{args.manifest}: empty manifest")
    record = json.loads(lines[-1])
    if record.get("command") not in ("test1", "test2"):
        raise UsageError("replay supports test1/test2 manifests")
    config = RunConfig.from_dict(record["config"])
    gate_cfg = dict(record.get("gate_options", {}))
    cache = args.cache or record.get("cache")
    if not cache:
        raise UsageError("manifest has no cache path; pass --cache")
    gate_cfg["cache"] = str(cache)
    config = dataclasses.replace(config, gate="replay")
    data = None if record.get("data") in (None, "bundled") else Path(record["data"])
    out = args.out or args.manifest.parent / "replay"
    outcome = _run_test(record["command"], config, gate_cfg, data, out)
    _print_outcome(outcome)
    expected = record.get("outcome_digest")
    if expected and expected != outcome.digest():
        print("replay digest differs from the recorded run")
        return EXIT_ERROR
    print("replay matches the recorded run")
    return _exit_for(outcome)


COMMANDS = {"test1": cmd_test, "test2": cmd_test, "scan": cmd_scan, "screen": cmd_screen,
            "report": cmd_report, "replay": cmd_replay}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_ERROR
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fakedate: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (FakeDateError, OSError, ValueError, yaml.YAMLError) as exc:
        print(f"fakedate: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
