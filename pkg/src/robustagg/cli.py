"""Command-line front end: run, sweep, and replay subcommands.

Exit codes: 0 pass, 1 audit failure (or divergence on replay), 2 parse or
configuration error, 3 disconnection.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys

from . import orchestrator
from .errors import ConfigError
from .scenario import SCHEMA, Scenario

EXIT_OK = 0
EXIT_AUDIT_FAIL = 1
EXIT_PARSE_ERROR = 2
EXIT_DISCONNECTED = 3


def render_report(result: orchestrator.RunResult) -> str:
    return json.dumps(result.to_dict(), sort_keys=True, indent=2) + "\n"


def _apply_overrides(scenario_dict: dict, args: argparse.Namespace) -> dict:
    out = copy.deepcopy(scenario_dict)
    if getattr(args, "seed_override", None) is not None:
        out["seed"] = args.seed_override
    if getattr(args, "atr", None):
        out["atr"] = args.atr
    if getattr(args, "accept_on_als2", False):
        out["accept_on_als2"] = True
    return out


def cmd_run(args: argparse.Namespace) -> int:
    try:
        scenario = Scenario.from_dict(
            _apply_overrides(Scenario.from_file(args.config).config, args)
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    result = orchestrator.run_sessions(scenario)
    text = render_report(result)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if result.disconnected:
        print("run truncated: exclusions disconnected the network", file=sys.stderr)
        return EXIT_DISCONNECTED
    return EXIT_OK if result.audits()["all_pass"] else EXIT_AUDIT_FAIL


def cmd_sweep(args: argparse.Namespace) -> int:
    try:
        template = Scenario.from_file(args.template).config
        sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    if not sizes:
        return EXIT_OK
    points = []
    for n in sizes:
        cfg = copy.deepcopy(template)
        cfg["topology"]["n"] = n
        try:
            scenario = Scenario.from_dict(_apply_overrides(cfg, args))
        except ConfigError as exc:
            print(f"config error at n={n}: {exc}", file=sys.stderr)
            return EXIT_PARSE_ERROR
        result = orchestrator.run_sessions(scenario)
        if result.disconnected:
            print(f"n={n}: disconnected", file=sys.stderr)
            return EXIT_DISCONNECTED
        success = [r for r in result.records if r.verdict == "success"]
        failure = [r for r in result.records if r.verdict == "failure"]
        rec = success[0] if success else result.records[0]
        points.append(
            {
                "n": n,
                "height": rec.tree_height,
                "degree": rec.tree_degree,
                "success_cost": max((r.max_congestion for r in success), default=None),
                "failure_cost": max((r.max_congestion for r in failure), default=None),
            }
        )
    audit = orchestrator.cost_audit(points) if len(points) >= 2 else {"pass": True}
    table = {"schema": SCHEMA, "points": points, "cost_audit": audit}
    text = json.dumps(table, sort_keys=True, indent=2) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK if audit["pass"] else EXIT_AUDIT_FAIL


def cmd_replay(args: argparse.Namespace) -> int:
    try:
        with open(args.report, "r", encoding="utf-8") as fh:
            original = fh.read()
        data = json.loads(original)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read report: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    if data.get("schema") != SCHEMA:
        print(
            f"refusing replay: report schema {data.get('schema')!r} does not "
            f"match this build ({SCHEMA})",
            file=sys.stderr,
        )
        return EXIT_PARSE_ERROR
    if "config" not in data or "config_hash" not in data:
        print("refusing replay: report carries no embedded config/seed", file=sys.stderr)
        return EXIT_PARSE_ERROR
    try:
        scenario = Scenario.from_dict(data["config"])
    except ConfigError as exc:
        print(f"embedded config invalid: {exc}", file=sys.stderr)
        return EXIT_PARSE_ERROR
    if scenario.hash() != data["config_hash"]:
        print("refusing replay: embedded config does not match its hash", file=sys.stderr)
        return EXIT_PARSE_ERROR
    regenerated = render_report(orchestrator.run_sessions(scenario))
    if regenerated == original:
        print("verified: replay reproduces the report byte-for-byte")
        return EXIT_OK
    print("divergent: replay does not reproduce the report", file=sys.stderr)
    return EXIT_AUDIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustagg",
        description="Deterministic simulator for robust secure in-network aggregation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one scenario and emit a report")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out")
    p_run.add_argument("--seed-override", type=int, dest="seed_override")
    p_run.add_argument("--atr", choices=["basic", "resilient"])
    p_run.add_argument("--accept-on-als2", action="store_true", dest="accept_on_als2")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a template across network sizes")
    p_sweep.add_argument("--template", required=True)
    p_sweep.add_argument("--sizes", required=True, help="comma-separated sizes")
    p_sweep.add_argument("--out")
    p_sweep.add_argument("--seed-override", type=int, dest="seed_override")
    p_sweep.add_argument("--atr", choices=["basic", "resilient"])
    p_sweep.add_argument("--accept-on-als2", action="store_true", dest="accept_on_als2")
    p_sweep.set_defaults(func=cmd_sweep)

    p_replay = sub.add_parser("replay", help="re-execute a report and compare bytes")
    p_replay.add_argument("--report", required=True)
    p_replay.set_defaults(func=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
