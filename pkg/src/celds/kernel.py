"""Synchronous-parallel execution kernel.

A world is a flat map from locations to values plus a registry of declared
agents. All agent rules of one step read the same frozen snapshot and emit
updates; the kernel merges them, detecting conflicting writes to exclusive
locations and folding same-step contributions to additive locations, then
applies the merged set atomically. A failed merge leaves the world untouched.

Locations are qualified names ``function(key)``, mirroring how scenario
scripts and temporal properties address state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from .model import (
    AdaptationSession,
    CeldsError,
    Config,
    ControllerAgent,
    ControllerState,
    Diagnosis,
    Heartbeat,
    LeaderAgent,
    LeaderState,
    MonitorAgent,
    MonitorState,
    NodeMetrics,
    Notification,
    SessionStatus,
    WorkflowSchema,
)

Location = tuple[str, str]


class _Unset:
    """Sentinel written to delete a location (make it undefined)."""

    def __repr__(self) -> str:  # pragma: no cover
        return "UNSET"


UNSET = _Unset()


class ConflictError(CeldsError):
    """Two rules wrote different values to one exclusive location."""

    def __init__(self, location: Location, values: Sequence[Any]):
        self.location = location
        self.values = tuple(values)
        func, key = location
        rendered = " vs ".join(repr(canonical_value(v)) for v in self.values)
        super().__init__(f"conflicting updates to {func}({key}): {rendered}")


class MergePolicy(str, Enum):
    EXCLUSIVE = "exclusive"
    ADDITIVE = "additive"


#: Locations whose same-step contributions accumulate instead of conflicting.
#: Counters sum; tuple-valued locations concatenate in canonical order.
ADDITIVE_FUNCTIONS = frozenset({"acknowledged_controllers", "controller_mailbox"})


def merge_policy(func: str) -> MergePolicy:
    return MergePolicy.ADDITIVE if func in ADDITIVE_FUNCTIONS else MergePolicy.EXCLUSIVE


# Function classification, following the monitored/controlled/shared split of
# ASM signatures. Scenario scripts may only write monitored and shared
# locations; machine rules write controlled and shared ones.
MONITORED_FUNCTIONS = frozenset({"action_outcome"})
SHARED_FUNCTIONS = frozenset(
    {
        "heartbeat_response_arrived",
        "heartbeat_latency",
        "monitor_measurements",
        "is_repository_available",
        "assigned_monitors",
        "assigned_node",
        "has_leader",
        "leader_state",
    }
)
DERIVED_FUNCTIONS = frozenset({"heartbeat_timeout", "is_problem_discovered", "trigger_execute"})

#: Name aliases accepted when parsing scenarios and properties.
FUNCTION_ALIASES = {"actionController_state": "controller_state"}


def canonical_value(value: Any) -> Any:
    """Reduce a stored value to plain hashable data for digests and keys."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, tuple):
        return tuple(canonical_value(v) for v in value)
    if isinstance(value, frozenset):
        return tuple(sorted(canonical_value(v) for v in value))
    return value


@dataclass(frozen=True)
class Update:
    """One write: an assignment or an additive contribution."""

    location: Location
    value: Any
    add: bool = False


@dataclass
class UpdateSet:
    """The writes produced by one synchronous step, before merging."""

    entries: list[Update] = field(default_factory=list)

    def assign(self, func: str, key: str, value: Any) -> None:
        self.entries.append(Update((func, key), value))

    def unset(self, func: str, key: str) -> None:
        self.entries.append(Update((func, key), UNSET))

    def add(self, func: str, key: str, value: Any) -> None:
        if merge_policy(func) is not MergePolicy.ADDITIVE:
            raise CeldsError(f"additive update to exclusive location {func}({key})")
        self.entries.append(Update((func, key), value, add=True))

    def extend(self, other: "UpdateSet") -> None:
        self.entries.extend(other.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def merged(self) -> dict[Location, Any]:
        """Fold entries into one value per location.

        Exclusive locations admit any number of identical assignments but
        raise ConflictError on disagreement. Additive locations fold their
        contributions: integers sum, tuples concatenate sorted; an absolute
        assignment to an additive location must be the sole write that step.
        """
        grouped: dict[Location, list[Update]] = {}
        for entry in self.entries:
            grouped.setdefault(entry.location, []).append(entry)

        out: dict[Location, Any] = {}
        for location, entries in grouped.items():
            func, _ = location
            if merge_policy(func) is MergePolicy.EXCLUSIVE:
                values = {self._key(e.value) for e in entries}
                if len(values) > 1:
                    raise ConflictError(location, [e.value for e in entries])
                out[location] = entries[0].value
            else:
                assigns = [e for e in entries if not e.add]
                adds = [e for e in entries if e.add]
                if assigns and (adds or len(assigns) > 1):
                    raise ConflictError(location, [e.value for e in entries])
                if assigns:
                    out[location] = assigns[0].value
                else:
                    out[location] = _fold_additive(location, adds)
        return out

    @staticmethod
    def _key(value: Any) -> Any:
        return "\x00unset" if value is UNSET else canonical_value(value)

    def as_records(self) -> list[dict[str, Any]]:
        """Canonical, sorted rendering for trace files."""
        records = []
        for entry in sorted(
            self.entries, key=lambda e: (e.location, repr(self._key(e.value)), e.add)
        ):
            func, key = entry.location
            records.append(
                {
                    "location": f"{func}({key})",
                    "op": "add" if entry.add else "set",
                    "value": None if entry.value is UNSET else canonical_value(entry.value),
                }
            )
        return records


def _fold_additive(location: Location, adds: list[Update]) -> Any:
    values = [e.value for e in adds]
    if all(isinstance(v, int) for v in values):
        return ("\x00delta", sum(values))
    if all(isinstance(v, tuple) for v in values):
        items: list[Any] = []
        for v in values:
            items.extend(v)
        items.sort(key=repr)
        return ("\x00extend", tuple(items))
    raise ConflictError(location, values)


@dataclass(frozen=True)
class SessionSpec:
    """Static shape of one adaptation session: actions, wiring, membership."""

    id: str
    schema: WorkflowSchema
    controllers: tuple[str, ...]
    inference_area: frozenset[str] = frozenset()
    unresponsive: frozenset[str] = frozenset()

    def controller_for(self, action_id: str) -> str:
        return self.controllers[self.schema.action_ids().index(action_id)]

    def action_for(self, controller_id: str) -> str:
        return self.schema.action_ids()[self.controllers.index(controller_id)]


@dataclass
class Registry:
    """Declared agent populations of a world.

    The registry is not part of the mutable state: it changes only through
    explicit administrative operations (creating an adaptation session), and
    exploration never mutates it.
    """

    node_ids: tuple[str, ...]
    monitor_ids: tuple[str, ...]
    middleware_id: str = "middleware_1"
    sessions: dict[str, SessionSpec] = field(default_factory=dict)

    def leader_for(self, node_id: str) -> str:
        prefix, _, suffix = node_id.rpartition("_")
        if prefix == "node" and suffix.isdigit():
            return f"leader_{suffix}"
        return f"leader_of_{node_id}"

    @property
    def leader_ids(self) -> tuple[str, ...]:
        return tuple(self.leader_for(n) for n in self.node_ids)

    def node_of_leader(self, leader_id: str) -> Optional[str]:
        for node in self.node_ids:
            if self.leader_for(node) == leader_id:
                return node
        return None

    @property
    def controller_ids(self) -> tuple[str, ...]:
        out: list[str] = []
        for sid in sorted(self.sessions):
            out.extend(self.sessions[sid].controllers)
        return tuple(out)

    @property
    def action_ids(self) -> tuple[str, ...]:
        out: list[str] = []
        for sid in sorted(self.sessions):
            out.extend(self.sessions[sid].schema.action_ids())
        return tuple(out)

    @property
    def session_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.sessions))

    def session_controllers(self, session_id: str) -> tuple[str, ...]:
        return self.sessions[session_id].controllers

    def session_of_controller(self, controller_id: str) -> Optional[SessionSpec]:
        for sid in sorted(self.sessions):
            if controller_id in self.sessions[sid].controllers:
                return self.sessions[sid]
        return None

    def session_of_action(self, action_id: str) -> Optional[SessionSpec]:
        for sid in sorted(self.sessions):
            if action_id in self.sessions[sid].schema.action_ids():
                return self.sessions[sid]
        return None

    def quantifier_domain(self, set_name: str) -> tuple[str, ...]:
        domains = {
            "Monitor": self.monitor_ids,
            "Node": self.node_ids,
            "Leader": self.leader_ids,
            "Controller": self.controller_ids,
            "ActionController": self.controller_ids,
            "Action": self.action_ids,
        }
        if set_name not in domains:
            raise CeldsError(f"unknown quantifier domain {set_name!r}")
        return domains[set_name]


def resolve_location(func: str, key: str) -> Location:
    """Apply name aliases: controller-state synonyms, heartbeat keyed by monitor."""
    func = FUNCTION_ALIASES.get(func, func)
    if func.startswith("heartbeat_") and key.startswith("heartbeat_"):
        key = "monitor_" + key[len("heartbeat_"):]
    return (func, key)


@dataclass
class World:
    """Full valuation of all locations at one step.

    ``step`` is bookkeeping for logs and traces; it is deliberately excluded
    from :meth:`state_key` and :meth:`digest` so that exploration can merge
    states reached at different depths. Rules must not read it.
    """

    locs: dict[Location, Any]
    registry: Registry
    cfg: Config
    step: int = 0

    # -- raw access ---------------------------------------------------------

    def get(self, func: str, key: str, default: Any = None) -> Any:
        return self.locs.get((func, key), default)

    def defined(self, func: str, key: str) -> bool:
        return (func, key) in self.locs

    def read(self, func: str, key: str) -> Any:
        """Read through aliases, including derived (computed) functions."""
        func, key = resolve_location(func, key)
        if func in DERIVED_FUNCTIONS:
            from . import monitor as monitor_rules  # local import to avoid a cycle
            from . import adaptation as adaptation_rules

            if func == "heartbeat_timeout":
                return monitor_rules.heartbeat_timeout(self, key)
            if func == "is_problem_discovered":
                return monitor_rules.is_problem_discovered(self, key)
            return adaptation_rules.trigger_execute(self, key)
        return self.locs.get((func, key))

    # -- structured views ---------------------------------------------------

    def assigned_monitors(self, node_id: str) -> tuple[str, ...]:
        return self.get("assigned_monitors", node_id, ())

    def monitor_view(self, monitor_id: str) -> MonitorAgent:
        state = MonitorState(self.get("monitor_state", monitor_id, MonitorState.ACTIVE))
        diagnosis = self.get("diagnosis", monitor_id)
        measurements = self.get("monitor_measurements", monitor_id)
        pending = None
        if state is MonitorState.WAIT_FOR_RESPONSE:
            waited = self.get("hb_waited", monitor_id, 0)
            arrived = bool(self.get("heartbeat_response_arrived", monitor_id, False))
            pending = Heartbeat(
                target=self.get("assigned_node", monitor_id, ""),
                sent_at=self.step - waited,
                response_arrived=arrived,
                latency=self.get("heartbeat_latency", monitor_id),
            )
        return MonitorAgent(
            id=monitor_id,
            assigned_node=self.get("assigned_node", monitor_id),
            state=state,
            diagnosis=Diagnosis(diagnosis) if diagnosis is not None else None,
            trigger_gossip=bool(self.get("trigger_gossip", monitor_id, False)),
            confidence_degree=self.get("confidence_degree", monitor_id, 1.0),
            current_measurements=(
                NodeMetrics.from_pairs(measurements) if measurements is not None else None
            ),
            pending_heartbeat=pending,
            dismissed=bool(self.get("monitor_dismissed", monitor_id, False)),
        )

    def leader_exists(self, leader_id: str) -> bool:
        return self.defined("leader_state", leader_id)

    def leader_view(self, leader_id: str) -> LeaderAgent:
        node = self.registry.node_of_leader(leader_id) or ""
        assessment = self.get("assessment", leader_id)
        return LeaderAgent(
            id=leader_id,
            node=node,
            state=LeaderState(self.get("leader_state", leader_id, LeaderState.IDLE_LEADER)),
            failed_diagnoses=self.get("failed_diagnoses", leader_id, 0),
            critical_diagnoses=self.get("critical_diagnoses", leader_id, 0),
            normal_diagnoses=self.get("normal_diagnoses", leader_id, 0),
            assessment=Diagnosis(assessment) if assessment is not None else None,
        )

    def controller_view(self, controller_id: str) -> ControllerAgent:
        spec = self.registry.session_of_controller(controller_id)
        pending = self.get("pending_notification", controller_id)
        return ControllerAgent(
            id=controller_id,
            action=spec.action_for(controller_id) if spec else "",
            state=ControllerState(
                self.get("controller_state", controller_id, ControllerState.WAITING_NOTIFICATION)
            ),
            acknowledged_controllers=self.get("acknowledged_controllers", controller_id, 0),
            pending_notification=Notification.from_value(pending) if pending else None,
        )

    def session_view(self, session_id: str) -> AdaptationSession:
        spec = self.registry.sessions[session_id]
        return AdaptationSession(
            id=session_id,
            controllers=tuple(self.controller_view(c) for c in spec.controllers),
            schema=spec.schema,
            status=SessionStatus(self.get("session_status", session_id, SessionStatus.RUNNING)),
        )

    # -- state identity -----------------------------------------------------

    def state_key(self) -> tuple:
        """Hashable canonical identity of the state, step excluded."""
        return tuple(
            sorted(
                ((func, key, canonical_value(v)) for (func, key), v in self.locs.items()),
                key=repr,
            )
        )

    def digest(self) -> str:
        payload = repr(self.state_key()).encode()
        return hashlib.sha256(payload).hexdigest()

    # -- evolution ----------------------------------------------------------

    def apply(self, merged: Mapping[Location, Any], step_delta: int = 1) -> "World":
        """Produce the successor world from merged updates."""
        locs = dict(self.locs)
        for location, value in merged.items():
            if value is UNSET:
                locs.pop(location, None)
            elif isinstance(value, tuple) and len(value) == 2 and value[0] == "\x00delta":
                locs[location] = locs.get(location, 0) + value[1]
            elif isinstance(value, tuple) and len(value) == 2 and value[0] == "\x00extend":
                locs[location] = locs.get(location, ()) + value[1]
            else:
                locs[location] = value
        return World(locs=locs, registry=self.registry, cfg=self.cfg, step=self.step + step_delta)

    def with_writes(self, writes: Mapping[Location, Any]) -> "World":
        """Apply environment writes in place of rule updates (no step advance)."""
        locs = dict(self.locs)
        for location, value in writes.items():
            if value is UNSET:
                locs.pop(location, None)
            else:
                locs[location] = value
        return World(locs=locs, registry=self.registry, cfg=self.cfg, step=self.step)


@dataclass(frozen=True)
class StoreEffect:
    """An append to one of the three stores, emitted alongside updates."""

    store: str
    record: tuple[tuple[str, Any], ...]

    @classmethod
    def of(cls, store: str, **fields: Any) -> "StoreEffect":
        return cls(store, tuple(sorted(fields.items())))


RuleResult = tuple[UpdateSet, list[StoreEffect]]
RuleFn = Callable[[World], RuleResult]


def step_world(world: World, rules: Iterable[RuleFn]) -> tuple[World, UpdateSet, list[StoreEffect]]:
    """Run one synchronous-parallel step.

    Every rule sees the same frozen ``world``; their updates are merged and
    applied atomically. On a merge conflict the original world is left
    untouched and ConflictError propagates to the caller.
    """
    updates = UpdateSet()
    effects: list[StoreEffect] = []
    for rule in rules:
        produced, emitted = rule(world)
        updates.extend(produced)
        effects.extend(emitted)
    merged = updates.merged()
    return world.apply(merged), updates, effects
