"""Batch command line: simulate, validate, verify, adapt.

Exit codes are the machine contract: 0 when every check and property passed
and no conflict occurred, 1 when a check or property failed, 2 for missing
or malformed input files, 3 when a simulation step raised an update-set
conflict. ``CELDS_SEED`` provides the default seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Any, Optional

from . import io as celds_io
from .adaptation import CaseRepository
from .checker import (
    ChoiceDecls,
    DEFAULT_NORMAL_METRICS,
    HeartbeatOutcome,
    VerdictStatus,
    check,
    explore,
    parse_property_file,
)
from .harness import AdaptiveRun, Simulation, Stores, Topology, build_world
from .kernel import ConflictError
from .model import CeldsError, Config
from .scenario import execute_scenario, parse_scenario

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_FILE_ERROR = 2
EXIT_CONFLICT = 3


def default_choice_decls(cfg: Config, base_latency: float = 5) -> ChoiceDecls:
    """Binary heartbeat behaviour per monitor, fixed per exploration branch."""
    return ChoiceDecls(
        heartbeat=(
            HeartbeatOutcome(True, base_latency),
            HeartbeatOutcome(True, cfg.max_latency + 1),
        ),
        heartbeat_per_run=True,
        metrics=(DEFAULT_NORMAL_METRICS,),
        repository=(True,),
        action_outcomes=(True,),
    )


class _Reporter:
    def __init__(self, as_records: bool):
        self.as_records = as_records

    def emit(self, record_kind: str, text: str, **fields: Any) -> None:
        if self.as_records:
            record = {"record": record_kind}
            record.update(fields)
            print(json.dumps(record, sort_keys=True, default=str))
        else:
            print(text)


def _seed(args: argparse.Namespace) -> int:
    if args.seed is not None:
        return args.seed
    return int(os.environ.get("CELDS_SEED", "0"))


def _load_topology(path: str) -> Topology:
    return celds_io.load_topology(path)


def cmd_simulate(args: argparse.Namespace, out: _Reporter) -> int:
    topology = _load_topology(args.topology)
    faults = celds_io.load_faults(args.faults) if args.faults else []
    world = build_world(topology)
    sim = Simulation(world, topology, seed=_seed(args), faults=faults)
    try:
        sim.run(args.steps)
    except ConflictError as exc:
        out.emit("conflict", f"conflict: {exc}", error=str(exc))
        return EXIT_CONFLICT
    if args.trace:
        sim.save_trace(args.trace)
    if args.stores:
        sim.stores.save(args.stores)
    out.emit(
        "summary",
        f"simulated {args.steps} steps, final digest {sim.world.digest()[:16]}, "
        f"{len(sim.stores.data)} data rows, {len(sim.stores.event)} events, "
        f"{len(sim.stores.meta)} meta records",
        steps=args.steps,
        digest=sim.world.digest(),
        data_rows=len(sim.stores.data),
        events=len(sim.stores.event),
        meta=len(sim.stores.meta),
    )
    return EXIT_OK


def cmd_validate(args: argparse.Namespace, out: _Reporter) -> int:
    topology = _load_topology(args.topology)
    try:
        text = open(args.scenario).read()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read scenario {args.scenario}: {exc}")
    scenario = parse_scenario(text)
    world = build_world(topology)
    report, _ = execute_scenario(scenario, world, store=Stores())
    for result in report.checks:
        status = "PASS" if result.passed else "FAIL"
        out.emit(
            "check",
            f"check {result.location} = {result.expected}: {status} (actual {result.actual})",
            location=result.location,
            expected=result.expected,
            actual=result.actual,
            passed=result.passed,
        )
    for conflict in report.conflicts:
        out.emit("conflict", f"conflict: {conflict}", error=conflict)
    passed = sum(1 for c in report.checks if c.passed)
    out.emit(
        "summary",
        f"{report.steps_run} steps, {passed}/{len(report.checks)} checks passed, "
        f"{len(report.conflicts)} conflicts",
        steps=report.steps_run,
        checks=len(report.checks),
        passed=passed,
        conflicts=len(report.conflicts),
    )
    if report.conflicts:
        return EXIT_CONFLICT
    return EXIT_OK if report.ok else EXIT_FAILURES


def cmd_verify(args: argparse.Namespace, out: _Reporter) -> int:
    topology = _load_topology(args.topology)
    try:
        text = open(args.props).read()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read property file {args.props}: {exc}")
    properties = parse_property_file(text)
    world = build_world(topology)
    bound = args.bound if args.bound is not None else world.cfg.exploration_bound
    graph = explore(world, default_choice_decls(world.cfg), bound)
    out.emit(
        "graph",
        f"explored {len(graph)} states up to bound {bound}",
        states=len(graph),
        bound=bound,
    )
    all_hold = True
    for prop in properties:
        verdict = check(prop, graph)
        all_hold = all_hold and verdict.status is VerdictStatus.HOLDS_UP_TO_BOUND
        line = f"{verdict.status.value}  {prop.text}"
        if verdict.detail:
            line += f"  [{verdict.detail}]"
        out.emit(
            "verdict",
            line,
            status=verdict.status.value,
            property=prop.text,
            bound=verdict.bound,
            detail=verdict.detail,
        )
        if verdict.counterexample is not None:
            out.emit(
                "counterexample",
                f"  counterexample ({verdict.counterexample.description}): "
                f"{len(verdict.counterexample.labels)} steps, digests "
                + " -> ".join(d[:12] for d in verdict.counterexample.digests),
                description=verdict.counterexample.description,
                steps=len(verdict.counterexample.labels),
                digests=verdict.counterexample.digests,
                labels=[list(map(list, label)) for label in verdict.counterexample.labels],
            )
    return EXIT_OK if all_hold else EXIT_FAILURES


def cmd_adapt(args: argparse.Namespace, out: _Reporter) -> int:
    topology = _load_topology(args.topology)
    repo = celds_io.load_cases(args.case_base) if args.case_base else CaseRepository()
    faults = celds_io.load_faults(args.faults) if args.faults else []
    world = build_world(topology)
    sim = Simulation(world, topology, seed=_seed(args), faults=faults)
    run = AdaptiveRun(sim, repo)
    try:
        run.run(args.steps)
    except ConflictError as exc:
        out.emit("conflict", f"conflict: {exc}", error=str(exc))
        return EXIT_CONFLICT
    if args.trace:
        sim.save_trace(args.trace)
    if args.save_cases:
        celds_io.save_cases(args.save_cases, repo)
    interesting = (
        "session_started",
        "session_completed",
        "session_aborted",
        "adaptation_escalated",
        "case_retained",
        "insufficient_data",
    )
    for row in sim.stores.event:
        if row.get("kind") in interesting:
            out.emit("event", f"step {row.get('step')}: {row}", **row)
    out.emit(
        "summary",
        f"adaptive run of {args.steps} steps, {len(repo.cases)} cases in repository",
        steps=args.steps,
        cases=len(repo.cases),
    )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="celds",
        description="Deterministic monitoring/adaptation middleware simulator and checker",
    )
    parser.add_argument("--format", choices=["text", "records"], default="text")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run the middleware for N steps")
    p.add_argument("--topology", required=True)
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--faults", default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--stores", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="execute a scenario script")
    p.add_argument("--topology", required=True)
    p.add_argument("--scenario", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("verify", help="check temporal properties up to a bound")
    p.add_argument("--topology", required=True)
    p.add_argument("--props", required=True)
    p.add_argument("--bound", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("adapt", help="run the full monitoring/adaptation loop")
    p.add_argument("--topology", required=True)
    p.add_argument("--case-base", dest="case_base", default=None)
    p.add_argument("--faults", default=None)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--save-cases", dest="save_cases", default=None)
    p.set_defaults(func=cmd_adapt)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = _Reporter(args.format == "records")
    try:
        return args.func(args, out)
    except (FileNotFoundError, celds_io.FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE_ERROR
    except CeldsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE_ERROR


if __name__ == "__main__":
    sys.exit(main())
