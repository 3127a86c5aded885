"""Middleware orchestration: assignment, election, gossip routing, dismissal.

The middleware owns the main rule of each step. It idempotently assigns
monitors to nodes and elects one leader per node, routes gossip triggers to
idle leaders, dismisses monitors whose confidence fell below the accepted
minimum, and drives every agent rule against the same frozen snapshot.
"""

from __future__ import annotations

from typing import Any, Callable, Optional

from . import adaptation, leader, monitor
from .kernel import StoreEffect, UpdateSet, World
from .model import CeldsError, ContractViolation, LeaderState, MonitorState

MIDDLEWARE_EXECUTING = "EXECUTING"


class AssignmentError(CeldsError):
    """A node cannot be brought up to its monitor redundancy target."""


class ElectionError(CeldsError):
    """Leader election was requested for a node without monitors."""


def _unassigned_pool(world: World, pool: tuple[str, ...]) -> list[str]:
    return sorted(
        m
        for m in pool
        if world.get("assigned_node", m) is None
        and not world.get("monitor_dismissed", m, False)
    )


def assign_monitors_to_node(
    world: World, node_id: str, pool: tuple[str, ...], k: int
) -> UpdateSet:
    """Bring a node to exactly k assigned monitors; a no-op once it is there.

    Selection is deterministic: lowest ids first. Raises AssignmentError when
    the unassigned pool cannot cover the shortfall of an initial assignment.
    """
    u = UpdateSet()
    current = world.assigned_monitors(node_id)
    need = k - len(current)
    if need <= 0:
        return u
    candidates = _unassigned_pool(world, pool)
    if len(candidates) < need:
        raise AssignmentError(
            f"{node_id} needs {need} monitors but only {len(candidates)} are available"
        )
    chosen = candidates[:need]
    u.assign("assigned_monitors", node_id, tuple(sorted(current + tuple(chosen))))
    for monitor_id in chosen:
        u.assign("assigned_node", monitor_id, node_id)
        if not world.defined("monitor_state", monitor_id):
            u.assign("monitor_state", monitor_id, MonitorState.ACTIVE)
        if not world.defined("confidence_degree", monitor_id):
            u.assign("confidence_degree", monitor_id, 1.0)
    return u


def elect_leader(world: World, node_id: str) -> UpdateSet:
    """Create the node's single leader; a no-op if one was already elected."""
    u = UpdateSet()
    if world.get("has_leader", node_id) is not None:
        return u
    if not world.assigned_monitors(node_id):
        raise ElectionError(f"{node_id} has no monitors to lead")
    leader_id = world.registry.leader_for(node_id)
    u.assign("has_leader", node_id, leader_id)
    u.assign("leader_state", leader_id, LeaderState.IDLE_LEADER)
    u.assign("failed_diagnoses", leader_id, 0)
    u.assign("critical_diagnoses", leader_id, 0)
    u.assign("normal_diagnoses", leader_id, 0)
    u.assign("reporting_monitors", leader_id, 0)
    return u


def route_gossip(world: World) -> UpdateSet:
    """Move the leader of every gossiping monitor's node from idle to EVALUATE."""
    u = UpdateSet()
    for monitor_id in world.registry.monitor_ids:
        if not world.get("trigger_gossip", monitor_id, False):
            continue
        node_id = world.get("assigned_node", monitor_id)
        if node_id is None:
            raise ContractViolation(f"{monitor_id} gossips while unassigned")
        leader_id = world.get("has_leader", node_id)
        if leader_id is None:
            continue
        state = LeaderState(world.get("leader_state", leader_id, LeaderState.IDLE_LEADER))
        if state is LeaderState.IDLE_LEADER:
            u.assign("leader_state", leader_id, LeaderState.EVALUATE)
    return u


def dismiss_low_confidence(world: World, cfg=None) -> tuple[UpdateSet, list[StoreEffect]]:
    """Dismiss every monitor strictly below the minimum confidence degree.

    Dismissed monitors leave their node's assignment and are flagged so they
    are never re-assigned; a replacement request is recorded and served by
    the assignment rule on the following step.
    """
    cfg = cfg or world.cfg
    u = UpdateSet()
    effects: list[StoreEffect] = []
    dismissed_by_node: dict[str, list[str]] = {}
    for monitor_id in world.registry.monitor_ids:
        if world.get("monitor_dismissed", monitor_id, False):
            continue
        node_id = world.get("assigned_node", monitor_id)
        if node_id is None:
            continue
        confidence = world.get("confidence_degree", monitor_id, 1.0)
        if confidence < cfg.min_confidence_degree:
            dismissed_by_node.setdefault(node_id, []).append(monitor_id)
    for node_id, dismissed in sorted(dismissed_by_node.items()):
        remaining = tuple(m for m in world.assigned_monitors(node_id) if m not in dismissed)
        u.assign("assigned_monitors", node_id, remaining)
        for monitor_id in sorted(dismissed):
            u.assign("monitor_dismissed", monitor_id, True)
            u.unset("assigned_node", monitor_id)
            effects.append(
                StoreEffect.of(
                    "meta",
                    step=world.step,
                    kind="monitor_dismissed",
                    monitor=monitor_id,
                    node=node_id,
                    confidence=world.get("confidence_degree", monitor_id, 1.0),
                )
            )
            effects.append(
                StoreEffect.of(
                    "meta",
                    step=world.step,
                    kind="replacement_requested",
                    node=node_id,
                )
            )
    return u, effects


class RuleSet:
    """The per-agent transition functions driven by the middleware.

    Swappable for experiments: the property checker's mutation tests replace
    the monitor rule with a deliberately broken variant.
    """

    def __init__(
        self,
        monitor_rule: Callable[..., tuple[UpdateSet, list[StoreEffect]]] = monitor.step_monitor,
        leader_rule: Callable[..., tuple[UpdateSet, list[StoreEffect]]] = leader.step_leader,
        controller_rule: Callable[..., tuple[UpdateSet, list[StoreEffect]]] = adaptation.step_controller,
    ):
        self.monitor_rule = monitor_rule
        self.leader_rule = leader_rule
        self.controller_rule = controller_rule


def middleware_step(
    world: World,
    rules: Optional[RuleSet] = None,
    store: Any = None,
) -> tuple[UpdateSet, list[StoreEffect]]:
    """Produce the full update set of one step.

    All sub-rules read the same snapshot, so their composition order only
    affects the order of entries, never the outcome. A node that dismissed
    monitors this step is skipped by assignment; its replacement arrives on
    the next step.
    """
    rules = rules or RuleSet()
    u = UpdateSet()
    effects: list[StoreEffect] = []
    if world.get("middleware_state", world.registry.middleware_id) != MIDDLEWARE_EXECUTING:
        return u, effects

    cfg = world.cfg
    registry = world.registry

    dismiss_updates, dismiss_effects = dismiss_low_confidence(world, cfg)
    dismissed_nodes = {
        key for (func, key) in (e.location for e in dismiss_updates.entries)
        if func == "assigned_monitors"
    }
    u.extend(dismiss_updates)
    effects.extend(dismiss_effects)

    prospective: dict[str, int] = {}
    for node_id in registry.node_ids:
        assigned = world.assigned_monitors(node_id)
        prospective[node_id] = len(assigned)
        if node_id in dismissed_nodes:
            continue
        if len(assigned) == 0:
            u.extend(assign_monitors_to_node(world, node_id, registry.monitor_ids, cfg.redundancy_k))
            prospective[node_id] = cfg.redundancy_k
        elif len(assigned) < cfg.redundancy_k:
            # Top-up after a dismissal: serve what the pool allows, keep the
            # replacement request queued otherwise.
            need = cfg.redundancy_k - len(assigned)
            candidates = _unassigned_pool(world, registry.monitor_ids)[:need]
            if candidates:
                u.assign(
                    "assigned_monitors", node_id, tuple(sorted(assigned + tuple(candidates)))
                )
                for monitor_id in candidates:
                    u.assign("assigned_node", monitor_id, node_id)
                    u.assign("monitor_state", monitor_id, MonitorState.ACTIVE)
                    u.assign("confidence_degree", monitor_id, 1.0)
                    effects.append(
                        StoreEffect.of(
                            "meta",
                            step=world.step,
                            kind="monitor_replaced",
                            node=node_id,
                            monitor=monitor_id,
                        )
                    )
                prospective[node_id] += len(candidates)

    for node_id in registry.node_ids:
        if world.get("has_leader", node_id) is None and prospective[node_id] > 0:
            leader_id = registry.leader_for(node_id)
            u.assign("has_leader", node_id, leader_id)
            u.assign("leader_state", leader_id, LeaderState.IDLE_LEADER)
            u.assign("failed_diagnoses", leader_id, 0)
            u.assign("critical_diagnoses", leader_id, 0)
            u.assign("normal_diagnoses", leader_id, 0)
            u.assign("reporting_monitors", leader_id, 0)

    u.extend(route_gossip(world))

    for monitor_id in registry.monitor_ids:
        if world.get("assigned_node", monitor_id) is None:
            continue
        if world.get("monitor_dismissed", monitor_id, False):
            continue
        produced, emitted = rules.monitor_rule(world, monitor_id, store)
        u.extend(produced)
        effects.extend(emitted)

    for node_id in registry.node_ids:
        leader_id = world.get("has_leader", node_id)
        if leader_id is not None:
            produced, emitted = rules.leader_rule(world, leader_id)
            u.extend(produced)
            effects.extend(emitted)

    for controller_id in registry.controller_ids:
        produced, emitted = rules.controller_rule(world, controller_id)
        u.extend(produced)
        effects.extend(emitted)

    for session_id in registry.session_ids:
        produced, emitted = adaptation.step_session(world, session_id)
        u.extend(produced)
        effects.extend(emitted)

    return u, effects
