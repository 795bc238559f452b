"""Command-line entry point: ``spiralsim {tune,tables,baseline,simulate,replay}``.

Exit codes: 0 ok, 2 infeasible parameters, 3 invariant violation, 4 bad input.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from importlib import resources
from pathlib import Path

from . import security as sec
from .core import ConfigError

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VIOLATION = 3
EXIT_BAD_INPUT = 4

TABLE_COLUMNS = ["network_size", "shard_size", "group_size", "failure_prob"]
SEED_ENV = "SPIRALSIM_SEED"


class BadInput(Exception):
    pass


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2)


def _fmt_prob(p) -> str:
    return "" if p is None else f"{p:.6e}"


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TABLE_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


# -- security commands ------------------------------------------------------------------

def cmd_tune(args) -> int:
    N = args.network
    if args.shard_size is not None:
        S = args.shard_size
        G = sec.min_group_size(N, S, args.f, args.fb, args.eps)
        missing = "group_size"
    else:
        G = args.group_size
        S = sec.min_shard_size_given_group(N, G, args.f, args.fb, args.eps)
        missing = "shard_size"
    if G is None or S is None:
        print(f"infeasible: no {missing} meets eps={args.eps:g} for N={N}, "
              f"F={args.f:g}, F_B={args.fb:g}", file=sys.stderr)
        return EXIT_INFEASIBLE
    p = sec.SecurityParams(N, S, G, args.f, args.fb, args.eps)
    out = {
        "network_size": N,
        "shard_size": S,
        "group_size": G,
        "num_shards": N // S,
        "num_groups": N // (S * G),
        "f": args.f,
        "f_b": args.fb,
        "f_a": p.F_A,
        "eps": args.eps,
        "solved_for": missing,
        "failure": sec.system_failure_bound(p).as_dict(),
    }
    print(_dump(out))
    return EXIT_OK


def reference_table_csv(F: float, F_B: float, eps: float, mode: str) -> str:
    cells = sec.emit_reference_table(sec.REFERENCE_RANGES, sec.REFERENCE_SHARD_SIZES, F, F_B, eps, mode)
    return _csv([f"{c.low}-{c.high}", c.shard_size, "" if c.group_size is None else c.group_size,
                 _fmt_prob(c.failure_prob)] for c in cells)


def parameter_rows_csv(F: float, F_B: float, eps: float) -> str:
    rows = []
    for N in sec.DEFAULT_NETWORKS:
        S = sec.DEFAULT_SHARD_SIZES[N]
        G = sec.min_group_size(N, S, F, F_B, eps)
        prob = None if G is None else sec.system_failure_bound(sec.SecurityParams(N, S, G, F, F_B, eps)).system
        rows.append([N, S, "" if G is None else G, _fmt_prob(prob)])
    return _csv(rows)


def baseline_csv(F: float, eps: float) -> str:
    rows = []
    for N in sec.DEFAULT_NETWORKS:
        S = sec.baseline_shard_size(N, F, eps)
        rows.append([N, S, 1, _fmt_prob(sec.baseline_failure(N, S, F))])
    return _csv(rows)


def cmd_tables(args) -> int:
    if args.which == "reference":
        text = reference_table_csv(args.f, args.fb, args.eps, args.mode)
    elif args.which == "paper-params":
        text = parameter_rows_csv(args.f, args.fb, args.eps)
    else:
        text = baseline_csv(args.f, args.eps)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_baseline(args) -> int:
    S = sec.baseline_shard_size(args.network, args.f, args.eps)
    prob = sec.baseline_failure(args.network, S, args.f)
    print(_dump({
        "network_size": args.network,
        "shard_size": S,
        "num_shards": args.network // S,
        "f": args.f,
        "eps": args.eps,
        "failure_prob": prob,
        "meets_eps": prob <= args.eps,
    }))
    return EXIT_OK


# -- simulation commands ---------------------------------------------------------------

def bundled_scenarios() -> list[str]:
    root = resources.files("spiralsim") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def resolve_scenario(name: str) -> Path:
    p = Path(name)
    if p.is_file():
        return p
    stem = name[:-5] if name.endswith(".json") else name
    if stem in bundled_scenarios():
        return Path(str(resources.files("spiralsim") / "scenarios" / f"{stem}.json"))
    raise BadInput(f"scenario {name!r} not found (bundled: {', '.join(bundled_scenarios())})")


def load_scenario(name: str):
    from .sim.config import ScenarioConfig

    path = resolve_scenario(name)
    try:
        cfg = ScenarioConfig.load(path)
    except (ValueError, TypeError, KeyError) as exc:
        raise BadInput(f"{path}: {exc}") from None
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            cfg = cfg.with_seed(int(env))
        except ValueError:
            raise BadInput(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return cfg


def parse_seeds(spec: str) -> list[int]:
    """``"5"`` means seeds 0..4; ``"10-19"`` an inclusive range; commas join parts."""
    seeds: list[int] = []
    try:
        if "-" not in spec and "," not in spec:
            return list(range(int(spec)))
        for part in spec.split(","):
            if "-" in part:
                a, b = part.split("-", 1)
                seeds.extend(range(int(a), int(b) + 1))
            else:
                seeds.append(int(part))
    except ValueError:
        raise BadInput(f"bad seed list {spec!r}") from None
    return seeds


def cmd_simulate(args) -> int:
    from .sim.world import run, run_batch

    cfg = load_scenario(args.scenario)
    out = Path(args.out)
    if args.batch:
        results = run_batch(cfg, parse_seeds(args.batch), out, args.workers)
        failed = [s for s, ok in results if not ok]
        summary = {"runs": len(results), "failed_seeds": failed, "ok": not failed}
        out.mkdir(parents=True, exist_ok=True)
        (out / "batch.json").write_text(_dump(summary) + "\n", newline="\n")
        print(_dump(summary))
        return EXIT_VIOLATION if failed else EXIT_OK
    res = run(cfg)
    res.write(out)
    t = res.report["totals"]
    print(f"seed {cfg.seed}: {t['finalized']} blocks finalized, {t['discarded']} discarded, "
          f"{t['finalized_txs']} txs, tps {t['tps']:.1f}; audit {'ok' if res.ok else 'FAILED'}")
    for v in res.violations:
        print(f"violation: {v}", file=sys.stderr)
    for e in res.report["audit"]["errors"]:
        print(f"audit: {e}", file=sys.stderr)
    return EXIT_OK if res.ok else EXIT_VIOLATION


def cmd_replay(args) -> int:
    from .sim.trace import MalformedTrace, audit_text

    try:
        text = Path(args.trace).read_text()
    except OSError as exc:
        raise BadInput(str(exc)) from None
    try:
        res = audit_text(text)
    except MalformedTrace as exc:
        print(f"malformed trace: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    if res.ok:
        print(f"pass: {res.rows} rows, {res.finalized} finalized, {res.discarded} discarded")
        return EXIT_OK
    for line, msg in res.errors:
        print(f"fail: line {line}: {msg}")
    return EXIT_VIOLATION


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spiralsim",
                                description="Sharding security calculator and endorsement simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("tune", help="solve for the missing shard or group size")
    t.add_argument("--network", type=int, required=True)
    g = t.add_mutually_exclusive_group(required=True)
    g.add_argument("--shard-size", type=int)
    g.add_argument("--group-size", type=int)
    t.add_argument("--f", type=float, default=0.25, help="total malicious fraction")
    t.add_argument("--fb", type=float, default=0.125, help="Byzantine fraction")
    t.add_argument("--eps", type=float, default=sec.DEFAULT_EPS)
    t.set_defaults(func=cmd_tune)

    tb = sub.add_parser("tables", help="regenerate a parameter table as CSV")
    tb.add_argument("--which", choices=["reference", "paper-params", "baseline"], required=True)
    tb.add_argument("--f", type=float, default=0.25)
    tb.add_argument("--fb", type=float, default=0.125)
    tb.add_argument("--eps", type=float, default=sec.DEFAULT_EPS)
    tb.add_argument("--mode", choices=["lower-edge", "range-max"], default="lower-edge",
                    help="how a network-size range is evaluated (reference table only)")
    tb.set_defaults(func=cmd_tables)

    b = sub.add_parser("baseline", help="shard size without endorsement groups")
    b.add_argument("--network", type=int, required=True)
    b.add_argument("--f", type=float, default=0.25)
    b.add_argument("--eps", type=float, default=sec.DEFAULT_EPS)
    b.set_defaults(func=cmd_baseline)

    s = sub.add_parser("simulate", help="run a scenario")
    s.add_argument("--scenario", required=True, help="JSON file or bundled scenario name")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--batch", help="seed list: N, A-B or comma-separated")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("replay", help="re-audit a recorded trace")
    r.add_argument("--trace", required=True)
    r.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_BAD_INPUT
    try:
        return args.func(args)
    except (BadInput, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
