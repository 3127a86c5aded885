"""Loading and saving the text-based interchange files.

All formats are JSON or JSON-lines, diff-friendly and documented in
docs/formats.md: topology descriptions, fault schedules, and the case
repository. Scenario scripts and property files have their own grammars and
are parsed by their modules.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Union

from .adaptation import CaseRepository
from .harness import FaultInjection, FaultKind, NodeSpec, SessionTemplate, Topology
from .model import (
    ActionSpec,
    AdaptationCase,
    CeldsError,
    OutcomeRecord,
    ProblemDescriptor,
    WorkflowSchema,
)

PathLike = Union[str, Path]


class FileFormatError(CeldsError):
    """A file exists but does not follow its documented grammar."""


def _read_json(path: PathLike, kind: str) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read {kind} file {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{kind} file {path} is not valid JSON: {exc}") from exc


def schema_from_data(data: dict) -> WorkflowSchema:
    try:
        actions = tuple(
            ActionSpec(
                id=a["id"],
                capability=a.get("capability", "noop"),
                parameters=tuple(sorted((a.get("parameters") or {}).items())),
            )
            for a in data["actions"]
        )
        dependencies = tuple((before, after) for before, after in data.get("dependencies", []))
    except (KeyError, TypeError) as exc:
        raise FileFormatError(f"malformed workflow schema: {exc}") from exc
    return WorkflowSchema(actions=actions, dependencies=dependencies)


def schema_to_data(schema: WorkflowSchema) -> dict:
    return {
        "actions": [
            {"id": a.id, "capability": a.capability, "parameters": dict(a.parameters)}
            for a in schema.actions
        ],
        "dependencies": [list(d) for d in schema.dependencies],
    }


def load_topology(path: PathLike) -> Topology:
    data = _read_json(path, "topology")
    try:
        nodes = [NodeSpec(id=n["id"], profile=n.get("profile", {})) for n in data["nodes"]]
        session = None
        if "session" in data and data["session"] is not None:
            s = data["session"]
            session = SessionTemplate(
                schema=schema_from_data(s),
                outcomes={k: bool(v) for k, v in (s.get("outcomes") or {}).items()},
                unresponsive=tuple(s.get("unresponsive", [])),
                inference_area=tuple(s.get("inference_area", [])),
            )
        return Topology(
            nodes=nodes,
            monitor_pool=int(data.get("monitor_pool", 3)),
            initial_confidences={
                k: float(v) for k, v in (data.get("initial_confidences") or {}).items()
            },
            preassigned=bool(data.get("preassigned", True)),
            session=session,
            config_overrides=data.get("config", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"malformed topology {path}: {exc}") from exc


def load_faults(path: PathLike) -> list[FaultInjection]:
    data = _read_json(path, "fault schedule")
    if not isinstance(data, list):
        raise FileFormatError(f"fault schedule {path} must be a JSON list")
    faults = []
    for row in data:
        try:
            value = row.get("value")
            if isinstance(value, list):
                value = tuple(value)
            faults.append(
                FaultInjection(
                    target=row["target"],
                    kind=FaultKind(row["kind"]),
                    from_step=int(row["from_step"]),
                    duration=int(row["duration"]),
                    value=value,
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise FileFormatError(f"malformed fault record {row!r}: {exc}") from exc
    return faults


def case_from_data(data: dict) -> AdaptationCase:
    try:
        problem = ProblemDescriptor(features=dict(data["problem"]["features"]))
        schema = schema_from_data(data["schema"])
        outcomes = tuple(
            OutcomeRecord(enacted_at=int(o["enacted_at"]), succeeded=bool(o["succeeded"]))
            for o in data.get("outcomes", [])
        )
        return AdaptationCase(
            id=data["id"], problem=problem, solution=schema, outcome_history=outcomes
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"malformed case record: {exc}") from exc


def case_to_data(case: AdaptationCase) -> dict:
    return {
        "id": case.id,
        "problem": {"features": dict(case.problem.features)},
        "schema": schema_to_data(case.solution),
        "outcomes": [
            {"enacted_at": o.enacted_at, "succeeded": o.succeeded} for o in case.outcome_history
        ],
    }


def load_cases(path: PathLike) -> CaseRepository:
    repo = CaseRepository()
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read case file {path}: {exc}") from exc
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        try:
            data = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FileFormatError(f"{path}:{number}: invalid JSON: {exc}") from exc
        repo.add(case_from_data(data))
    return repo


def save_cases(path: PathLike, repo: CaseRepository) -> None:
    with open(path, "w") as fh:
        for case in repo.cases:
            fh.write(json.dumps(case_to_data(case), sort_keys=True) + "\n")
