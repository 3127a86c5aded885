"""Shared domain types for the monitoring and adaptation middleware.

Everything here is a plain value type: enumerations for agent states and
diagnoses, measurement records, problem descriptors and workflow schemas for
the adaptation repository, and the global configuration. The only behaviour
is construction-time invariant checking plus :func:`validate_world`, which
audits a world snapshot against the type invariants and returns violation
descriptors instead of raising.
"""

from __future__ import annotations


from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence


class CeldsError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(CeldsError):
    """An operation was invoked outside its stated precondition."""


class Diagnosis(str, Enum):
    """Verdict on a node, totally ordered by pessimism.

    NORMAL < CRITICAL < FAILED, so ``max`` over diagnoses picks the worst.
    The comparison operators are all defined explicitly: the str mixin would
    otherwise leak its lexicographic ordering.
    """

    NORMAL = "NORMAL"
    CRITICAL = "CRITICAL"
    FAILED = "FAILED"

    @property
    def severity(self) -> int:
        return _SEVERITY[self]

    def __lt__(self, other: object) -> bool:
        if not isinstance(other, Diagnosis):
            return NotImplemented
        return self.severity < other.severity

    def __le__(self, other: object) -> bool:
        if not isinstance(other, Diagnosis):
            return NotImplemented
        return self.severity <= other.severity

    def __gt__(self, other: object) -> bool:
        if not isinstance(other, Diagnosis):
            return NotImplemented
        return self.severity > other.severity

    def __ge__(self, other: object) -> bool:
        if not isinstance(other, Diagnosis):
            return NotImplemented
        return self.severity >= other.severity


_SEVERITY = {Diagnosis.NORMAL: 0, Diagnosis.CRITICAL: 1, Diagnosis.FAILED: 2}


class MonitorState(str, Enum):
    ACTIVE = "ACTIVE"
    WAIT_FOR_RESPONSE = "WAIT_FOR_RESPONSE"
    COLLECT_DATA = "COLLECT_DATA"
    RETRIEVE_DATA = "RETRIEVE_DATA"
    ASSIGN_DIAGNOSIS = "ASSIGN_DIAGNOSIS"
    REPORT_PROBLEM = "REPORT_PROBLEM"
    LOG_DATA = "LOG_DATA"


class LeaderState(str, Enum):
    IDLE_LEADER = "IDLE_LEADER"
    EVALUATE = "EVALUATE"
    ASSESS = "ASSESS"


class ControllerState(str, Enum):
    WAITING_NOTIFICATION = "WAITING_NOTIFICATION"
    NOTIFICATION_RECEIVED = "NOTIFICATION_RECEIVED"
    ASSESS_NOTIFICATION = "ASSESS_NOTIFICATION"
    WAITING_FOR_ACKNOWLEDGEMENT = "WAITING_FOR_ACKNOWLEDGEMENT"
    ACTION_RUNNING = "ACTION_RUNNING"
    CONTROLLER_ACKNOW_FAILED = "CONTROLLER_ACKNOW_FAILED"
    READY_FOR_REMOVAL = "READY_FOR_REMOVAL"
    TERMINATED = "TERMINATED"


class SessionStatus(str, Enum):
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    ABORTED = "ABORTED"


class NotificationKind(str, Enum):
    ACTION_STARTING = "ACTION_STARTING"
    ACTION_COMPLETED = "ACTION_COMPLETED"
    ACTION_FAILED = "ACTION_FAILED"


class HeartbeatStatus(str, Enum):
    """Outcome of evaluating a heartbeat against the latency budget."""

    OK = "OK"
    LATE = "LATE"
    MISSING = "MISSING"


@dataclass(frozen=True)
class NodeMetrics:
    """One measurement vector collected from a node during a cycle.

    Percentages are bounded to [0, 100]; latency and bandwidth must be
    non-negative.
    """

    latency: float
    cpu_usage: float
    storage_usage: float
    memory_usage: float
    bandwidth: float

    def __post_init__(self) -> None:
        if self.latency < 0:
            raise ValueError(f"latency must be >= 0, got {self.latency}")
        if self.bandwidth < 0:
            raise ValueError(f"bandwidth must be >= 0, got {self.bandwidth}")
        for name in ("cpu_usage", "storage_usage", "memory_usage"):
            value = getattr(self, name)
            if not 0 <= value <= 100:
                raise ValueError(f"{name} must be in [0, 100], got {value}")

    def as_pairs(self) -> tuple[tuple[str, float], ...]:
        """Render as the labelled tuple list used by scenario scripts."""
        return (
            ("Latency", self.latency),
            ("CPU Usage", self.cpu_usage),
            ("Storage Usage", self.storage_usage),
            ("Memory Usage", self.memory_usage),
            ("Bandwidth", self.bandwidth),
        )

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, float]]) -> "NodeMetrics":
        labels = {
            "Latency": "latency",
            "CPU Usage": "cpu_usage",
            "Storage Usage": "storage_usage",
            "Memory Usage": "memory_usage",
            "Bandwidth": "bandwidth",
        }
        kwargs: dict[str, float] = {}
        for label, value in pairs:
            if label not in labels:
                raise ValueError(f"unknown measurement label {label!r}")
            kwargs[labels[label]] = value
        missing = set(labels.values()) - set(kwargs)
        if missing:
            raise ValueError(f"measurement list missing {sorted(missing)}")
        return cls(**kwargs)


@dataclass(frozen=True)
class Heartbeat:
    """A liveness probe awaiting or holding a response.

    ``latency`` is meaningful only once ``response_arrived`` is true;
    reading it earlier is a caller bug, so the accessor raises.
    """

    target: str
    sent_at: int
    response_arrived: bool = False
    latency: Optional[float] = None

    def observed_latency(self) -> float:
        if not self.response_arrived:
            raise ContractViolation(
                f"latency of heartbeat to {self.target} read before a response arrived"
            )
        if self.latency is None:
            raise ContractViolation(
                f"heartbeat to {self.target} arrived without a latency value"
            )
        return self.latency


class FeatureKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"


@dataclass(frozen=True)
class FeatureSpec:
    """Declared kind and range of one problem feature."""

    name: str
    kind: FeatureKind
    lower: float = 0.0
    upper: float = 1.0

    def __post_init__(self) -> None:
        if self.kind is FeatureKind.NUMERIC and not self.upper > self.lower:
            raise ValueError(f"feature {self.name}: empty range [{self.lower}, {self.upper}]")

    @property
    def span(self) -> float:
        return self.upper - self.lower


#: Feature vocabulary understood by the adaptation repository.
DEFAULT_FEATURES: tuple[FeatureSpec, ...] = (
    FeatureSpec("response_time", FeatureKind.NUMERIC, 0.0, 100.0),
    FeatureSpec("price", FeatureKind.NUMERIC, 0.0, 100.0),
    FeatureSpec("portability", FeatureKind.CATEGORICAL),
    FeatureSpec("region", FeatureKind.CATEGORICAL),
    FeatureSpec("availability", FeatureKind.NUMERIC, 0.0, 100.0),
    FeatureSpec("input_bandwidth", FeatureKind.NUMERIC, 0.0, 1000.0),
    FeatureSpec("output_bandwidth", FeatureKind.NUMERIC, 0.0, 1000.0),
)


@dataclass(frozen=True)
class ProblemDescriptor:
    """A problem situation as a feature vector with declared ranges."""

    features: Mapping[str, Any]
    specs: tuple[FeatureSpec, ...] = DEFAULT_FEATURES

    def __post_init__(self) -> None:
        declared = {s.name for s in self.specs}
        given = set(self.features)
        if given != declared:
            raise ValueError(
                f"descriptor features {sorted(given)} do not match declared {sorted(declared)}"
            )
        for spec in self.specs:
            value = self.features[spec.name]
            if spec.kind is FeatureKind.NUMERIC and not spec.lower <= value <= spec.upper:
                raise ValueError(
                    f"feature {spec.name}={value} outside declared range"
                    f" [{spec.lower}, {spec.upper}]"
                )

    def spec_for(self, name: str) -> FeatureSpec:
        for spec in self.specs:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def same_schema_as(self, other: "ProblemDescriptor") -> bool:
        return self.specs == other.specs

    def key(self) -> tuple[tuple[str, Any], ...]:
        return tuple(sorted(self.features.items()))


@dataclass(frozen=True)
class ActionSpec:
    """One adaptation action: a named capability with parameters."""

    id: str
    capability: str
    parameters: tuple[tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class WorkflowSchema:
    """DAG of adaptation actions; an edge (a, b) means b starts after a completes."""

    actions: tuple[ActionSpec, ...]
    dependencies: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        ids = [a.id for a in self.actions]
        if len(ids) != len(set(ids)):
            raise ValueError("duplicate action ids in schema")
        known = set(ids)
        for before, after in self.dependencies:
            if before not in known or after not in known:
                raise ValueError(f"dependency ({before}, {after}) names unknown action")
        self._check_acyclic(known)

    def _check_acyclic(self, known: set[str]) -> None:
        # Kahn's algorithm; leftover nodes mean a cycle.
        indegree = {a: 0 for a in known}
        for _, after in self.dependencies:
            indegree[after] += 1
        queue = sorted(a for a, d in indegree.items() if d == 0)
        seen = 0
        while queue:
            node = queue.pop()
            seen += 1
            for before, after in self.dependencies:
                if before == node:
                    indegree[after] -= 1
                    if indegree[after] == 0:
                        queue.append(after)
        if seen != len(known):
            raise ValueError("dependency set contains a cycle")

    def predecessors(self, action_id: str) -> frozenset[str]:
        return frozenset(b for b, a in self.dependencies if a == action_id)

    def roots(self) -> tuple[str, ...]:
        with_preds = {a for _, a in self.dependencies}
        return tuple(a.id for a in self.actions if a.id not in with_preds)

    def action_ids(self) -> tuple[str, ...]:
        return tuple(a.id for a in self.actions)


@dataclass(frozen=True)
class OutcomeRecord:
    enacted_at: int
    succeeded: bool


@dataclass(frozen=True)
class AdaptationCase:
    """A problem descriptor paired with the workflow that once addressed it."""

    id: str
    problem: ProblemDescriptor
    solution: WorkflowSchema
    outcome_history: tuple[OutcomeRecord, ...] = ()

    def with_outcome(self, record: OutcomeRecord) -> "AdaptationCase":
        return AdaptationCase(
            id=self.id,
            problem=self.problem,
            solution=self.solution,
            outcome_history=self.outcome_history + (record,),
        )

    def last_success_step(self) -> Optional[int]:
        successes = [o.enacted_at for o in self.outcome_history if o.succeeded]
        return max(successes) if successes else None


@dataclass(frozen=True)
class Notification:
    """A broadcast signal inside an adaptation session.

    ``sender`` is None only for the synthetic session-start signal delivered
    to dependency roots.
    """

    kind: NotificationKind
    sender: Optional[str] = None

    def as_value(self) -> tuple[str, str]:
        return (self.kind.value, self.sender or "")

    @classmethod
    def from_value(cls, value: tuple[str, str]) -> "Notification":
        kind, sender = value
        return cls(NotificationKind(kind), sender or None)


@dataclass
class Config:
    """Tunable thresholds and protocol parameters.

    Defaults keep scenario latencies 5 and 7 acceptable while 21 breaches
    the budget, and leave a working margin for all percentage thresholds.
    """

    redundancy_k: int = 3
    max_latency: float = 20.0
    min_confidence_degree: float = 0.5
    confidence_reward: float = 0.05
    confidence_penalty: float = 0.10
    similarity_threshold: float = 0.7
    critical_cpu: float = 85.0
    critical_memory: float = 85.0
    critical_storage: float = 90.0
    exploration_bound: int = 12
    weighted_diagnosis: bool = False
    heartbeat_wait_steps: int = 3
    ack_wait_steps: int = 6

    def __post_init__(self) -> None:
        if self.redundancy_k < 1:
            raise ValueError("redundancy_k must be >= 1")
        if self.max_latency < 0:
            raise ValueError("max_latency must be >= 0")
        for name in ("min_confidence_degree", "confidence_reward", "confidence_penalty"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {value}")
        if not 0 <= self.similarity_threshold <= 1:
            raise ValueError("similarity_threshold must be in [0, 1]")
        for name in ("critical_cpu", "critical_memory", "critical_storage"):
            value = getattr(self, name)
            if not 0 <= value <= 100:
                raise ValueError(f"{name} must be in [0, 100], got {value}")
        if self.exploration_bound < 0:
            raise ValueError("exploration_bound must be >= 0")
        if self.heartbeat_wait_steps < 1:
            raise ValueError("heartbeat_wait_steps must be >= 1")
        if self.ack_wait_steps < 1:
            raise ValueError("ack_wait_steps must be >= 1")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "Config":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**dict(data))


# --------------------------------------------------------------------------
# Agent snapshot views
#
# The execution kernel stores agent state as flat locations; these views
# materialize a typed picture of one agent for validation and inspection.
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MonitorAgent:
    id: str
    assigned_node: Optional[str]
    state: MonitorState
    diagnosis: Optional[Diagnosis]
    trigger_gossip: bool
    confidence_degree: float
    current_measurements: Optional[NodeMetrics]
    pending_heartbeat: Optional[Heartbeat]
    dismissed: bool = False


@dataclass(frozen=True)
class LeaderAgent:
    id: str
    node: str
    state: LeaderState
    failed_diagnoses: int
    critical_diagnoses: int
    normal_diagnoses: int
    assessment: Optional[Diagnosis]


@dataclass(frozen=True)
class ControllerAgent:
    id: str
    action: str
    state: ControllerState
    acknowledged_controllers: int
    pending_notification: Optional[Notification]


@dataclass(frozen=True)
class AdaptationSession:
    id: str
    controllers: tuple[ControllerAgent, ...]
    schema: WorkflowSchema
    status: SessionStatus

    @property
    def number_of_controllers(self) -> int:
        return len(self.controllers)


@dataclass(frozen=True)
class Violation:
    """One invariant breach found by validate_world."""

    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.subject}: {self.message}"


def validate_world(world: Any) -> list[Violation]:
    """Audit a world snapshot against every domain-type invariant.

    Returns an empty list iff the snapshot is well formed. Violations are
    reported, never raised, so callers can assert emptiness in tests or
    surface the full list diagnostically.
    """
    out: list[Violation] = []
    registry = world.registry

    for mid in registry.monitor_ids:
        monitor = world.monitor_view(mid)
        if not 0 <= monitor.confidence_degree <= 1:
            out.append(
                Violation(mid, f"confidence_degree {monitor.confidence_degree} outside [0, 1]")
            )
        if monitor.trigger_gossip:
            if monitor.diagnosis is None:
                out.append(Violation(mid, "trigger_gossip set with undefined diagnosis"))
            elif monitor.diagnosis is Diagnosis.NORMAL:
                out.append(Violation(mid, "trigger_gossip set with NORMAL diagnosis"))
        if monitor.assigned_node is not None and monitor.assigned_node not in registry.node_ids:
            out.append(Violation(mid, f"assigned to unknown node {monitor.assigned_node}"))

    for nid in registry.node_ids:
        assigned = world.assigned_monitors(nid)
        unknown = [m for m in assigned if m not in registry.monitor_ids]
        if unknown:
            out.append(Violation(nid, f"assigned monitors {unknown} not in pool"))
        if len(set(assigned)) != len(assigned):
            out.append(Violation(nid, "duplicate monitors in assignment"))

    for lid in registry.leader_ids:
        if not world.leader_exists(lid):
            continue
        leader = world.leader_view(lid)
        counters = (leader.failed_diagnoses, leader.critical_diagnoses, leader.normal_diagnoses)
        if any(c < 0 for c in counters):
            out.append(Violation(lid, f"negative diagnosis counter {counters}"))
        if leader.state is LeaderState.IDLE_LEADER and any(c != 0 for c in counters):
            out.append(Violation(lid, f"counters {counters} nonzero in IDLE_LEADER"))
        assigned = world.assigned_monitors(leader.node)
        if sum(counters) > len(assigned):
            out.append(
                Violation(lid, f"counter sum {sum(counters)} exceeds {len(assigned)} monitors")
            )

    for sid in registry.session_ids:
        session = world.session_view(sid)
        n = session.number_of_controllers
        if n != len(registry.session_controllers(sid)):
            out.append(Violation(sid, "controller set size disagrees with numberOfControllers"))
        for controller in session.controllers:
            if controller.acknowledged_controllers > n:
                out.append(
                    Violation(
                        controller.id,
                        f"acknowledged_controllers {controller.acknowledged_controllers}"
                        f" exceeds session size {n}",
                    )
                )
            if controller.acknowledged_controllers < 0:
                out.append(Violation(controller.id, "negative acknowledgement counter"))
            pending = controller.pending_notification
            if pending is not None and pending.sender is not None:
                if pending.sender not in registry.session_controllers(sid):
                    out.append(
                        Violation(controller.id, f"notification sender {pending.sender} unknown")
                    )

    return out
