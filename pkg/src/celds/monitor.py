"""Monitor state machine: heartbeat, data collection, diagnosis, reporting.

Each monitor runs a fixed cycle, one transition per step:

    ACTIVE -> WAIT_FOR_RESPONSE -> COLLECT_DATA -> RETRIEVE_DATA
           -> ASSIGN_DIAGNOSIS -> (REPORT_PROBLEM ->) LOG_DATA -> ACTIVE

WAIT_FOR_RESPONSE polls the environment every step and stays put until a
response is visible or the timeout is observed (latency over budget, or no
response after the configured number of waiting steps). COLLECT_DATA stays
put until the environment has published measurements for the node, which
lets scripted scenarios pace a monitor explicitly.
"""

from __future__ import annotations

from typing import Any, Optional

from .kernel import StoreEffect, UNSET, UpdateSet, World
from .model import (
    Config,
    ContractViolation,
    Diagnosis,
    Heartbeat,
    HeartbeatStatus,
    MonitorState,
    NodeMetrics,
)


class RepositoryUnavailable:
    """Marker returned when the metric repository cannot be queried."""

    def __repr__(self) -> str:
        return "REPOSITORY_UNAVAILABLE"

    def __eq__(self, other: object) -> bool:
        return isinstance(other, RepositoryUnavailable)

    def __hash__(self) -> int:
        return hash("REPOSITORY_UNAVAILABLE")


REPOSITORY_UNAVAILABLE = RepositoryUnavailable()


def evaluate_heartbeat(hb: Heartbeat, max_latency: float) -> HeartbeatStatus:
    """Classify a heartbeat: MISSING without a response, LATE over budget."""
    if not hb.response_arrived:
        return HeartbeatStatus.MISSING
    if hb.observed_latency() > max_latency:
        return HeartbeatStatus.LATE
    return HeartbeatStatus.OK


def assign_diagnosis(
    metrics: Optional[NodeMetrics], hb_result: HeartbeatStatus, cfg: Config
) -> Diagnosis:
    """Interpret the available data for one cycle.

    An unreachable or late node is FAILED outright. Otherwise any resource
    threshold breach makes the node CRITICAL; bandwidth is recorded but not
    thresholded.
    """
    if hb_result in (HeartbeatStatus.LATE, HeartbeatStatus.MISSING):
        return Diagnosis.FAILED
    if metrics is None:
        raise ContractViolation("assign_diagnosis needs metrics when the heartbeat was OK")
    if (
        metrics.cpu_usage >= cfg.critical_cpu
        or metrics.memory_usage >= cfg.critical_memory
        or metrics.storage_usage >= cfg.critical_storage
    ):
        return Diagnosis.CRITICAL
    return Diagnosis.NORMAL


def retrieve_history(world: World, monitor_id: str, store: Any):
    """Query the data store for the monitor's node, respecting availability.

    Returns the stored rows for the node, or REPOSITORY_UNAVAILABLE when the
    environment flags the repository as unreachable. Unavailability is a
    value, not an error: diagnosis proceeds on current measurements alone.
    """
    state = world.get("monitor_state", monitor_id, MonitorState.ACTIVE)
    if MonitorState(state) is not MonitorState.RETRIEVE_DATA:
        raise ContractViolation(f"{monitor_id} queried history outside RETRIEVE_DATA")
    available = world.get("is_repository_available", monitor_id)
    if available is False:
        return REPOSITORY_UNAVAILABLE
    node = world.get("assigned_node", monitor_id)
    return store.query_data(node=node)


def heartbeat_timeout(world: World, monitor_id: str) -> bool:
    """Derived predicate: the pending heartbeat has demonstrably failed."""
    arrived = world.get("heartbeat_response_arrived", monitor_id)
    if arrived:
        latency = world.get("heartbeat_latency", monitor_id)
        return latency is not None and latency > world.cfg.max_latency
    waited = world.get("hb_waited", monitor_id, 0)
    return waited >= world.cfg.heartbeat_wait_steps


def is_problem_discovered(world: World, monitor_id: str) -> bool:
    """Derived predicate: the monitor's next transition is into REPORT_PROBLEM."""
    state = MonitorState(world.get("monitor_state", monitor_id, MonitorState.ACTIVE))
    if state is MonitorState.WAIT_FOR_RESPONSE:
        return heartbeat_timeout(world, monitor_id)
    if state is MonitorState.ASSIGN_DIAGNOSIS:
        pairs = world.get("current_measurements", monitor_id)
        if pairs is None:
            return False
        metrics = NodeMetrics.from_pairs(pairs)
        return assign_diagnosis(metrics, HeartbeatStatus.OK, world.cfg) is not Diagnosis.NORMAL
    return False


def step_monitor(world: World, monitor_id: str, store: Any = None) -> tuple[UpdateSet, list[StoreEffect]]:
    """One transition of the monitor state machine, from the frozen snapshot."""
    node = world.get("assigned_node", monitor_id)
    if node is None:
        raise ContractViolation(f"{monitor_id} stepped while unassigned")

    cfg = world.cfg
    u = UpdateSet()
    effects: list[StoreEffect] = []
    state = MonitorState(world.get("monitor_state", monitor_id, MonitorState.ACTIVE))

    if state is MonitorState.ACTIVE:
        # Send the heartbeat; the response is observed on later steps.
        u.assign("monitor_state", monitor_id, MonitorState.WAIT_FOR_RESPONSE)
        u.assign("hb_waited", monitor_id, 0)

    elif state is MonitorState.WAIT_FOR_RESPONSE:
        arrived = world.get("heartbeat_response_arrived", monitor_id)
        latency = world.get("heartbeat_latency", monitor_id)
        waited = world.get("hb_waited", monitor_id, 0)
        if arrived and latency is not None:
            hb = Heartbeat(node, world.step - waited, response_arrived=True, latency=latency)
            if evaluate_heartbeat(hb, cfg.max_latency) is HeartbeatStatus.OK:
                u.assign("monitor_state", monitor_id, MonitorState.COLLECT_DATA)
            else:
                u.assign("diagnosis", monitor_id, Diagnosis.FAILED)
                u.assign("monitor_state", monitor_id, MonitorState.REPORT_PROBLEM)
        elif not arrived and waited >= cfg.heartbeat_wait_steps:
            u.assign("diagnosis", monitor_id, Diagnosis.FAILED)
            u.assign("monitor_state", monitor_id, MonitorState.REPORT_PROBLEM)
        else:
            # Response still outstanding (or incomplete): keep polling.
            u.assign("hb_waited", monitor_id, waited + 1)

    elif state is MonitorState.COLLECT_DATA:
        pairs = world.get("monitor_measurements", monitor_id)
        if pairs is not None:
            NodeMetrics.from_pairs(pairs)  # validate shape before adopting
            u.assign("current_measurements", monitor_id, tuple(tuple(p) for p in pairs))
            u.assign("monitor_state", monitor_id, MonitorState.RETRIEVE_DATA)

    elif state is MonitorState.RETRIEVE_DATA:
        if store is not None:
            retrieve_history(world, monitor_id, store)
        u.assign("monitor_state", monitor_id, MonitorState.ASSIGN_DIAGNOSIS)

    elif state is MonitorState.ASSIGN_DIAGNOSIS:
        pairs = world.get("current_measurements", monitor_id)
        if pairs is None:
            raise ContractViolation(f"{monitor_id} reached ASSIGN_DIAGNOSIS without measurements")
        metrics = NodeMetrics.from_pairs(pairs)
        verdict = assign_diagnosis(metrics, HeartbeatStatus.OK, cfg)
        u.assign("diagnosis", monitor_id, verdict)
        if verdict is Diagnosis.NORMAL:
            u.assign("monitor_state", monitor_id, MonitorState.LOG_DATA)
        else:
            u.assign("monitor_state", monitor_id, MonitorState.REPORT_PROBLEM)

    elif state is MonitorState.REPORT_PROBLEM:
        u.assign("trigger_gossip", monitor_id, True)
        u.assign("monitor_state", monitor_id, MonitorState.LOG_DATA)

    elif state is MonitorState.LOG_DATA:
        diagnosis = world.get("diagnosis", monitor_id)
        pairs = world.get("current_measurements", monitor_id)
        effects.append(
            StoreEffect.of(
                "data",
                step=world.step,
                node=node,
                monitor=monitor_id,
                diagnosis=None if diagnosis is None else Diagnosis(diagnosis).value,
                measurements=pairs,
                repository_available=world.get("is_repository_available", monitor_id, True),
            )
        )
        if world.get("trigger_gossip", monitor_id, False):
            u.assign("trigger_gossip", monitor_id, False)
        for func in (
            "heartbeat_response_arrived",
            "heartbeat_latency",
            "monitor_measurements",
            "is_repository_available",
            "current_measurements",
            "hb_waited",
        ):
            if world.defined(func, monitor_id):
                u.unset(func, monitor_id)
        u.assign("monitor_state", monitor_id, MonitorState.ACTIVE)

    return u, effects
