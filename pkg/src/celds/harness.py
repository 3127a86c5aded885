"""Simulation harness: simulated environment, fault injection, stores, traces.

The harness owns everything around the pure step function: it builds worlds
from topology descriptions, answers heartbeats and publishes metrics on
behalf of simulated nodes (honouring the active fault schedule), appends to
the three append-only stores, and records a replayable trace. Logical time
only: the step index is the sole clock.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Optional, Sequence

from . import adaptation, middleware
from .kernel import (
    Location,
    Registry,
    StoreEffect,
    UNSET,
    UpdateSet,
    World,
    canonical_value,
    step_world,
)
from .middleware import RuleSet
from .model import (
    CeldsError,
    Config,
    ControllerState,
    Diagnosis,
    LeaderState,
    MonitorState,
    NodeMetrics,
    ProblemDescriptor,
    SessionStatus,
    WorkflowSchema,
)


class FaultKind(str, Enum):
    CRASH = "CRASH"
    HIGH_LATENCY = "HIGH_LATENCY"
    RESOURCE_SPIKE = "RESOURCE_SPIKE"
    REPO_UNAVAILABLE = "REPO_UNAVAILABLE"


_HEARTBEAT_FAULTS = {FaultKind.CRASH, FaultKind.HIGH_LATENCY}


@dataclass(frozen=True)
class FaultInjection:
    """A scheduled disturbance of one node or monitor.

    Active during [from_step, from_step + duration). RESOURCE_SPIKE carries
    (metric, value); HIGH_LATENCY carries the forced latency.
    """

    target: str
    kind: FaultKind
    from_step: int
    duration: int
    value: Any = None

    def __post_init__(self) -> None:
        if self.duration < 1:
            raise ValueError("fault duration must be >= 1")
        if self.kind is FaultKind.HIGH_LATENCY:
            if not isinstance(self.value, (int, float)) or self.value < 0:
                raise ValueError("HIGH_LATENCY needs a non-negative latency value")
        if self.kind is FaultKind.RESOURCE_SPIKE:
            if (
                not isinstance(self.value, (list, tuple))
                or len(self.value) != 2
                or self.value[0] not in {"cpu_usage", "storage_usage", "memory_usage", "bandwidth"}
            ):
                raise ValueError("RESOURCE_SPIKE needs (metric, value)")
            metric, amount = self.value
            if metric != "bandwidth" and not 0 <= amount <= 100:
                raise ValueError(f"spike value {amount} outside [0, 100] for {metric}")

    def active(self, step: int) -> bool:
        return self.from_step <= step < self.from_step + self.duration

    def overlaps(self, other: "FaultInjection") -> bool:
        return (
            self.target == other.target
            and self.from_step < other.from_step + other.duration
            and other.from_step < self.from_step + self.duration
        )

    def contradicts(self, other: "FaultInjection") -> bool:
        if not self.overlaps(other):
            return False
        if self.kind in _HEARTBEAT_FAULTS and other.kind in _HEARTBEAT_FAULTS:
            return (self.kind, self.value) != (other.kind, other.value)
        if self.kind is FaultKind.RESOURCE_SPIKE and other.kind is FaultKind.RESOURCE_SPIKE:
            return self.value[0] == other.value[0] and self.value[1] != other.value[1]
        return False


def inject_fault(schedule: Sequence[FaultInjection], fault: FaultInjection) -> list[FaultInjection]:
    """Add a fault to the schedule, rejecting contradictory overlaps."""
    for existing in schedule:
        if fault.contradicts(existing):
            raise CeldsError(
                f"fault {fault.kind.value} on {fault.target} contradicts an overlapping"
                f" {existing.kind.value} fault"
            )
    return list(schedule) + [fault]


@dataclass
class Stores:
    """The three append-only stores: metric data, events, meta information."""

    data: list[dict] = field(default_factory=list)
    event: list[dict] = field(default_factory=list)
    meta: list[dict] = field(default_factory=list)

    def append(self, effect: StoreEffect) -> None:
        record = dict(effect.record)
        getattr(self, effect.store).append(record)

    def append_record(self, store: str, **fields: Any) -> None:
        getattr(self, store).append(dict(sorted(fields.items())))

    def query_data(
        self, node: Optional[str] = None, step_range: Optional[tuple[int, int]] = None
    ) -> list[dict]:
        rows = self.data
        if node is not None:
            rows = [r for r in rows if r.get("node") == node]
        if step_range is not None:
            lo, hi = step_range
            rows = [r for r in rows if lo <= r.get("step", -1) <= hi]
        return list(rows)

    def query_events(self, kind: Optional[str] = None) -> list[dict]:
        if kind is None:
            return list(self.event)
        return [r for r in self.event if r.get("kind") == kind]

    def query_meta(self, kind: Optional[str] = None) -> list[dict]:
        if kind is None:
            return list(self.meta)
        return [r for r in self.meta if r.get("kind") == kind]

    def save(self, directory: str) -> None:
        import os

        os.makedirs(directory, exist_ok=True)
        for name in ("data", "event", "meta"):
            with open(os.path.join(directory, f"{name}.jsonl"), "w") as fh:
                for row in getattr(self, name):
                    fh.write(json.dumps(row, sort_keys=True, default=str) + "\n")


DEFAULT_PROFILE = {
    "base_latency": 5,
    "latency_jitter": 0,
    "cpu_usage": 10,
    "storage_usage": 15,
    "memory_usage": 10,
    "bandwidth": 50,
}


@dataclass
class NodeSpec:
    id: str
    profile: dict = field(default_factory=dict)

    def value(self, key: str) -> Any:
        return self.profile.get(key, DEFAULT_PROFILE.get(key))

    def features(self) -> dict:
        return self.profile.get("features", {})


@dataclass
class SessionTemplate:
    """A pre-declared adaptation session for verification topologies."""

    schema: WorkflowSchema
    outcomes: dict[str, bool] = field(default_factory=dict)
    unresponsive: tuple[str, ...] = ()
    inference_area: tuple[str, ...] = ()


@dataclass
class Topology:
    nodes: list[NodeSpec]
    monitor_pool: int = 3
    initial_confidences: dict[str, float] = field(default_factory=dict)
    preassigned: bool = True
    session: Optional[SessionTemplate] = None
    config_overrides: dict[str, Any] = field(default_factory=dict)

    def monitor_ids(self) -> tuple[str, ...]:
        return tuple(f"monitor_{i}" for i in range(1, self.monitor_pool + 1))

    def node_ids(self) -> tuple[str, ...]:
        return tuple(n.id for n in self.nodes)

    def node(self, node_id: str) -> NodeSpec:
        for spec in self.nodes:
            if spec.id == node_id:
                return spec
        raise KeyError(node_id)


def build_world(topology: Topology, cfg: Optional[Config] = None) -> World:
    """Materialize the initial world of a topology.

    Preassigned topologies distribute the monitor pool over the nodes in id
    order, k monitors each, and elect every leader up front; otherwise the
    middleware performs assignment and election during the first steps.
    """
    if cfg is None:
        cfg = Config.from_mapping(topology.config_overrides) if topology.config_overrides else Config()
    registry = Registry(node_ids=topology.node_ids(), monitor_ids=topology.monitor_ids())
    locs: dict[Location, Any] = {("middleware_state", registry.middleware_id): middleware.MIDDLEWARE_EXECUTING}

    for monitor_id in registry.monitor_ids:
        locs[("monitor_state", monitor_id)] = MonitorState.ACTIVE
        locs[("trigger_gossip", monitor_id)] = False
        locs[("monitor_dismissed", monitor_id)] = False
        locs[("confidence_degree", monitor_id)] = float(
            topology.initial_confidences.get(monitor_id, 1.0)
        )

    if topology.preassigned:
        pool = list(registry.monitor_ids)
        k = cfg.redundancy_k
        if len(pool) < k * len(registry.node_ids):
            raise middleware.AssignmentError(
                f"pool of {len(pool)} cannot preassign {k} monitors to"
                f" {len(registry.node_ids)} nodes"
            )
        for index, node_id in enumerate(registry.node_ids):
            chosen = tuple(pool[index * k : (index + 1) * k])
            locs[("assigned_monitors", node_id)] = chosen
            for monitor_id in chosen:
                locs[("assigned_node", monitor_id)] = node_id
            leader_id = registry.leader_for(node_id)
            locs[("has_leader", node_id)] = leader_id
            locs[("leader_state", leader_id)] = LeaderState.IDLE_LEADER
            locs[("failed_diagnoses", leader_id)] = 0
            locs[("critical_diagnoses", leader_id)] = 0
            locs[("normal_diagnoses", leader_id)] = 0
            locs[("reporting_monitors", leader_id)] = 0

    world = World(locs=locs, registry=registry, cfg=cfg)
    if topology.session is not None:
        template = topology.session
        _, writes = adaptation.instantiate_solution(
            world,
            template.schema,
            inference_area=template.inference_area,
            unresponsive=template.unresponsive,
        )
        world = world.with_writes(writes)
    return world


class SimulatedEnvironment:
    """Answers heartbeats and publishes metrics for simulated nodes.

    Consulted after each machine step: for every monitor that is about to
    read a monitored location that is still undefined, the environment
    computes the value from the node profile and the active fault schedule.
    Action outcomes come from the per-action oracle (default success).
    """

    def __init__(
        self,
        topology: Topology,
        seed: int = 0,
        faults: Sequence[FaultInjection] = (),
        oracle: Optional[Mapping[str, bool]] = None,
    ):
        self.topology = topology
        self.rng = random.Random(seed)
        self.faults = list(faults)
        self.oracle = dict(oracle or {})
        if topology.session is not None:
            for action_id, outcome in topology.session.outcomes.items():
                self.oracle.setdefault(action_id, outcome)

    def _active(self, step: int, targets: Iterable[str], kinds: set[FaultKind]):
        for fault in self.faults:
            if fault.active(step) and fault.target in targets and fault.kind in kinds:
                return fault
        return None

    def provide(self, world: World, step: int) -> dict[Location, Any]:
        writes: dict[Location, Any] = {}
        for monitor_id in world.registry.monitor_ids:
            node_id = world.get("assigned_node", monitor_id)
            if node_id is None or world.get("monitor_dismissed", monitor_id, False):
                continue
            node = self.topology.node(node_id)
            targets = {node_id, monitor_id}
            state = MonitorState(world.get("monitor_state", monitor_id, MonitorState.ACTIVE))

            if state is MonitorState.WAIT_FOR_RESPONSE and not world.defined(
                "heartbeat_response_arrived", monitor_id
            ):
                fault = self._active(step, targets, _HEARTBEAT_FAULTS)
                if fault is not None and fault.kind is FaultKind.CRASH:
                    writes[("heartbeat_response_arrived", monitor_id)] = False
                elif fault is not None:
                    writes[("heartbeat_response_arrived", monitor_id)] = True
                    writes[("heartbeat_latency", monitor_id)] = fault.value
                else:
                    jitter = node.value("latency_jitter") or 0
                    latency = node.value("base_latency")
                    if jitter:
                        latency = max(1, latency + self.rng.randint(-jitter, jitter))
                    writes[("heartbeat_response_arrived", monitor_id)] = True
                    writes[("heartbeat_latency", monitor_id)] = latency

            elif state is MonitorState.COLLECT_DATA and not world.defined(
                "monitor_measurements", monitor_id
            ):
                metrics = {
                    "latency": world.get("heartbeat_latency", monitor_id, node.value("base_latency")),
                    "cpu_usage": node.value("cpu_usage"),
                    "storage_usage": node.value("storage_usage"),
                    "memory_usage": node.value("memory_usage"),
                    "bandwidth": node.value("bandwidth"),
                }
                spike = self._active(step, targets, {FaultKind.RESOURCE_SPIKE})
                if spike is not None:
                    metric, amount = spike.value
                    metrics[metric] = amount
                writes[("monitor_measurements", monitor_id)] = NodeMetrics(**metrics).as_pairs()

            elif state is MonitorState.RETRIEVE_DATA and not world.defined(
                "is_repository_available", monitor_id
            ):
                fault = self._active(step, targets, {FaultKind.REPO_UNAVAILABLE})
                writes[("is_repository_available", monitor_id)] = fault is None

        for session_id in world.registry.session_ids:
            spec = world.registry.sessions[session_id]
            for controller_id in spec.controllers:
                state = world.get(
                    "controller_state", controller_id, ControllerState.WAITING_NOTIFICATION
                )
                action_id = spec.action_for(controller_id)
                if ControllerState(state) is ControllerState.ACTION_RUNNING and not world.defined(
                    "action_outcome", action_id
                ):
                    writes[("action_outcome", action_id)] = bool(self.oracle.get(action_id, True))
        return writes


class Simulation:
    """A deterministic run of one world: stepping, faults, stores, trace."""

    def __init__(
        self,
        world: World,
        topology: Topology,
        seed: int = 0,
        faults: Sequence[FaultInjection] = (),
        rules: Optional[RuleSet] = None,
        oracle: Optional[Mapping[str, bool]] = None,
    ):
        schedule: list[FaultInjection] = []
        for fault in faults:
            schedule = inject_fault(schedule, fault)
        self.world = world
        self.topology = topology
        self.seed = seed
        self.faults = schedule
        self.rules = rules or RuleSet()
        self.stores = Stores()
        self.env = SimulatedEnvironment(topology, seed=seed, faults=schedule, oracle=oracle)
        self.trace: list[dict] = [
            {"step": 0, "digest": world.digest(), "updates": []}
        ]
        self.step_index = 0

    def inject_fault(self, fault: FaultInjection) -> None:
        self.faults = inject_fault(self.faults, fault)
        self.env.faults = self.faults

    def lift_faults(self, targets: Iterable[str]) -> None:
        """Withdraw active and future faults on the targets (repair)."""
        targets = set(targets)
        kept = [
            f
            for f in self.faults
            if f.target not in targets or f.from_step + f.duration <= self.step_index
        ]
        self.faults = kept
        self.env.faults = kept

    def run_step(self) -> UpdateSet:
        """Advance one step; ConflictError propagates with the world unchanged."""
        world = self.world

        def rule(w: World):
            return middleware.middleware_step(w, self.rules, self.stores)

        new_world, updates, effects = step_world(world, [rule])
        env_writes = self.env.provide(new_world, new_world.step)
        new_world = new_world.with_writes(env_writes)

        self.world = new_world
        self.step_index = new_world.step
        for effect in effects:
            self.stores.append(effect)
        records = updates.as_records()
        for (func, key), value in sorted(env_writes.items()):
            records.append(
                {
                    "location": f"{func}({key})",
                    "op": "env",
                    "value": None if value is UNSET else canonical_value(value),
                }
            )
        self.trace.append(
            {"step": self.step_index, "digest": new_world.digest(), "updates": records}
        )
        return updates

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.run_step()

    def save_trace(self, path: str) -> None:
        with open(path, "w") as fh:
            header = {
                "seed": self.seed,
                "config": {
                    k: getattr(self.world.cfg, k) for k in sorted(vars(self.world.cfg))
                },
            }
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for record in self.trace:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def simulate(
    topology: Topology,
    steps: int,
    seed: int = 0,
    faults: Sequence[FaultInjection] = (),
    cfg: Optional[Config] = None,
    rules: Optional[RuleSet] = None,
) -> Simulation:
    world = build_world(topology, cfg)
    sim = Simulation(world, topology, seed=seed, faults=faults, rules=rules)
    sim.run(steps)
    return sim


def build_problem_descriptor(
    sim: Simulation, node_id: str, assessment: Diagnosis
) -> ProblemDescriptor:
    """Snapshot the node's situation as a feature vector for retrieval."""
    node = sim.topology.node(node_id)
    rows = [r for r in sim.stores.query_data(node=node_id) if r.get("measurements")]
    latency = float(sim.world.cfg.max_latency) + 1.0
    bandwidth = float(node.value("bandwidth"))
    if rows:
        pairs = dict(rows[-1]["measurements"])
        latency = float(pairs.get("Latency", latency))
        bandwidth = float(pairs.get("Bandwidth", bandwidth))
    availability = {Diagnosis.NORMAL: 100.0, Diagnosis.CRITICAL: 50.0, Diagnosis.FAILED: 0.0}[
        assessment
    ]
    features = dict(node.features())
    descriptor = {
        "response_time": min(100.0, max(0.0, latency)),
        "price": float(features.get("price", 20.0)),
        "portability": features.get("portability", "container"),
        "region": features.get("region", "eu"),
        "availability": availability,
        "input_bandwidth": min(1000.0, max(0.0, bandwidth)),
        "output_bandwidth": min(1000.0, max(0.0, bandwidth)),
    }
    return ProblemDescriptor(features=descriptor)


@dataclass
class _PendingEvaluation:
    session_id: str
    node_id: str
    problem: ProblemDescriptor
    schema: WorkflowSchema
    completed_at: int
    round_requested: bool = False


class AdaptiveRun:
    """Closes the loop: diagnosis rounds trigger retrieval and enactment.

    When a leader concludes a round with a non-NORMAL assessment, the most
    similar case is retrieved and its workflow instantiated (one session per
    node at a time). A completed session repairs the node, i.e. lifts its
    faults, and its outcome is judged by the next assessment of that node;
    the judged outcome is retained into the repository either way.
    """

    def __init__(self, sim: Simulation, repo: adaptation.CaseRepository):
        self.sim = sim
        self.repo = repo
        self.pending: list[_PendingEvaluation] = []
        self._session_problem: dict[str, tuple[str, ProblemDescriptor, WorkflowSchema]] = {}
        self._session_counter = 0

    def _concluded_rounds(self, before: World, after: World) -> list[tuple[str, str, Diagnosis]]:
        rounds = []
        for node_id in after.registry.node_ids:
            leader_id = after.get("has_leader", node_id)
            if leader_id is None:
                continue
            was = before.get("leader_state", leader_id)
            now = after.get("leader_state", leader_id)
            if was == LeaderState.ASSESS and now == LeaderState.IDLE_LEADER:
                assessment = after.get("assessment", leader_id)
                if assessment is not None:
                    rounds.append((node_id, leader_id, Diagnosis(assessment)))
        return rounds

    def _node_session_running(self, node_id: str) -> bool:
        registry = self.sim.world.registry
        for sid in registry.session_ids:
            spec = registry.sessions[sid]
            if node_id in spec.inference_area:
                status = self.sim.world.get("session_status", sid)
                if status == SessionStatus.RUNNING:
                    return True
        return False

    def _start_adaptation(self, node_id: str, assessment: Diagnosis) -> None:
        problem = build_problem_descriptor(self.sim, node_id, assessment)
        result = adaptation.retrieve_case(problem, self.repo, self.sim.world.cfg)
        if result.case is None:
            self.sim.stores.append_record(
                "event",
                step=self.sim.step_index,
                kind="adaptation_escalated",
                node=node_id,
                reason=result.reason,
                best_similarity=result.best_similarity,
            )
            return
        self._session_counter += 1
        session_id = f"session_{self._session_counter}"
        spec, writes = adaptation.instantiate_solution(
            self.sim.world,
            result.case.solution,
            session_id=session_id,
            inference_area=(node_id,),
        )
        self.sim.world = self.sim.world.with_writes(writes)
        for action_id in result.case.solution.action_ids():
            self.sim.env.oracle.setdefault(action_id, True)
        self._session_problem[spec.id] = (node_id, problem, result.case.solution)
        self.sim.stores.append_record(
            "event",
            step=self.sim.step_index,
            kind="session_started",
            session=spec.id,
            node=node_id,
            case=result.case.id,
            similarity=result.best_similarity,
        )

    def _finish_session(self, session_id: str, status: SessionStatus) -> None:
        if session_id not in self._session_problem:
            return
        node_id, problem, schema = self._session_problem.pop(session_id)
        if status is SessionStatus.COMPLETED:
            self.sim.lift_faults({node_id} | set(self.sim.world.assigned_monitors(node_id)))
            self.pending.append(
                _PendingEvaluation(session_id, node_id, problem, schema, self.sim.step_index)
            )
        else:
            self._retain(session_id, node_id, problem, schema, succeeded=False)

    def _retain(self, session_id, node_id, problem, schema, succeeded: bool) -> None:
        case = adaptation.retain_case(
            problem, schema, succeeded, self.repo, enacted_at=self.sim.step_index
        )
        self.sim.stores.append_record(
            "event",
            step=self.sim.step_index,
            kind="case_retained",
            session=session_id,
            node=node_id,
            case=case.id,
            succeeded=succeeded,
        )

    def step(self) -> None:
        before = self.sim.world
        prior_status = {
            sid: self.sim.world.get("session_status", sid)
            for sid in self.sim.world.registry.session_ids
        }
        self.sim.run_step()
        after = self.sim.world

        for sid, old in prior_status.items():
            new = after.get("session_status", sid)
            if old == SessionStatus.RUNNING and new != SessionStatus.RUNNING:
                self._finish_session(sid, SessionStatus(new))

        rounds = self._concluded_rounds(before, after)
        for node_id, _, assessment in rounds:
            node_pending = False
            for pending in list(self.pending):
                if pending.node_id != node_id:
                    continue
                if self.sim.step_index - pending.completed_at < 7:
                    # A round tallying diagnoses recorded before the repair
                    # finished is not a post-adaptation assessment; wait for
                    # one that covers a full post-repair monitoring cycle.
                    node_pending = True
                    continue
                succeeded = adaptation.evaluate_adaptation(assessment)
                self._retain(
                    pending.session_id, node_id, pending.problem, pending.schema, succeeded
                )
                self.pending.remove(pending)
            if (
                assessment is not Diagnosis.NORMAL
                and not node_pending
                and not self._node_session_running(node_id)
            ):
                self._start_adaptation(node_id, assessment)

        # Once the node had time for a full post-repair monitoring cycle,
        # request one collaborative round so the adaptation gets judged even
        # if the repaired node no longer gossips on its own.
        for pending in self.pending:
            waited = self.sim.step_index - pending.completed_at
            if pending.round_requested or waited < 7:
                continue
            leader_id = after.get("has_leader", pending.node_id)
            if leader_id is None:
                continue
            if after.get("leader_state", leader_id) == LeaderState.IDLE_LEADER:
                self.sim.world = self.sim.world.with_writes(
                    {("leader_state", leader_id): LeaderState.EVALUATE}
                )
                pending.round_requested = True

        # Pending evaluations time out after the exploration bound.
        bound = self.sim.world.cfg.exploration_bound
        for pending in list(self.pending):
            if self.sim.step_index - pending.completed_at > bound:
                self._retain(
                    pending.session_id, pending.node_id, pending.problem, pending.schema, False
                )
                self.sim.stores.append_record(
                    "event",
                    step=self.sim.step_index,
                    kind="evaluation_timeout",
                    session=pending.session_id,
                    node=pending.node_id,
                )
                self.pending.remove(pending)

    def run(self, steps: int) -> None:
        for _ in range(steps):
            self.step()
