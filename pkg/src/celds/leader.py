"""Leader engine: tallying monitor diagnoses, majority assessment, confidence.

A leader sits idle until the middleware routes a gossip trigger to it. It
then tallies the diagnoses of its node's monitors from one frozen snapshot
(abstaining monitors are skipped), assesses the node with a pessimistic
comparison tree, rewards or penalizes each voting monitor's confidence
degree, resets its counters, and returns to idle.
"""

from __future__ import annotations

from typing import Optional, Sequence

from .kernel import StoreEffect, UNSET, UpdateSet, World
from .model import (
    Config,
    ContractViolation,
    Diagnosis,
    LeaderAgent,
    LeaderState,
    MonitorAgent,
)


def tally_diagnoses(
    leader: LeaderAgent, monitors: Sequence[MonitorAgent]
) -> tuple[int, int, int]:
    """Count (failed, critical, normal) over monitors with a defined diagnosis."""
    if leader.state is not LeaderState.EVALUATE:
        raise ContractViolation(f"{leader.id} tallied outside EVALUATE")
    failed = critical = normal = 0
    for monitor in monitors:
        if monitor.diagnosis is None:
            continue
        if monitor.diagnosis is Diagnosis.NORMAL:
            normal += 1
        elif monitor.diagnosis is Diagnosis.FAILED:
            failed += 1
        else:
            critical += 1
    return failed, critical, normal


def assess_node(failed: float, critical: float, normal: float) -> Diagnosis:
    """Majority assessment with pessimistic tie-breaking.

    FAILED wins any tie it is part of, then CRITICAL; a node is only NORMAL
    when normal votes strictly dominate. Zero counters everywhere therefore
    assess as FAILED; callers surface an insufficient-data warning for that
    case rather than masking it here.
    """
    if failed < 0 or critical < 0 or normal < 0:
        raise ContractViolation("diagnosis counters must be non-negative")
    if failed >= critical:
        return Diagnosis.FAILED if failed >= normal else Diagnosis.NORMAL
    return Diagnosis.CRITICAL if critical >= normal else Diagnosis.NORMAL


def assess_node_weighted(
    votes: Sequence[tuple[Diagnosis, float]]
) -> Diagnosis:
    """Assessment where each vote weighs in with the monitor's confidence."""
    failed = sum(w for d, w in votes if d is Diagnosis.FAILED)
    critical = sum(w for d, w in votes if d is Diagnosis.CRITICAL)
    normal = sum(w for d, w in votes if d is Diagnosis.NORMAL)
    return assess_node(failed, critical, normal)


def update_confidence(
    monitor_diag: Optional[Diagnosis], assessment: Diagnosis, c: float, cfg: Config
) -> float:
    """Reward agreement with the collective assessment, penalize dissent.

    The monitor's agreement stands in for similarity: the further the vote
    from the collective outcome, the larger the deduction. Abstention leaves
    the confidence untouched. The result is clamped to [0, 1].
    """
    if not 0 <= c <= 1:
        raise ContractViolation(f"confidence {c} outside [0, 1]")
    if monitor_diag is None:
        return c
    if monitor_diag is assessment:
        return min(1.0, c + cfg.confidence_reward)
    return max(0.0, c - cfg.confidence_penalty)


def reset_counters(leader: LeaderAgent) -> LeaderAgent:
    """Zero the counters and return to idle once an assessment is recorded."""
    if leader.assessment is None:
        raise ContractViolation(f"{leader.id} reset before recording an assessment")
    return LeaderAgent(
        id=leader.id,
        node=leader.node,
        state=LeaderState.IDLE_LEADER,
        failed_diagnoses=0,
        critical_diagnoses=0,
        normal_diagnoses=0,
        assessment=leader.assessment,
    )


def step_leader(world: World, leader_id: str) -> tuple[UpdateSet, list[StoreEffect]]:
    """One transition of the leader state machine."""
    u = UpdateSet()
    effects: list[StoreEffect] = []
    state = LeaderState(world.get("leader_state", leader_id, LeaderState.IDLE_LEADER))
    node = world.registry.node_of_leader(leader_id)

    if state is LeaderState.EVALUATE and node is not None:
        votes: list[tuple[str, str]] = []
        failed = critical = normal = 0
        for monitor_id in world.assigned_monitors(node):
            diagnosis = world.get("diagnosis", monitor_id)
            votes.append((monitor_id, "" if diagnosis is None else Diagnosis(diagnosis).value))
            if diagnosis is None:
                continue
            diagnosis = Diagnosis(diagnosis)
            if diagnosis is Diagnosis.NORMAL:
                normal += 1
            elif diagnosis is Diagnosis.FAILED:
                failed += 1
            else:
                critical += 1
        u.assign("failed_diagnoses", leader_id, failed)
        u.assign("critical_diagnoses", leader_id, critical)
        u.assign("normal_diagnoses", leader_id, normal)
        u.assign("reporting_monitors", leader_id, failed + critical + normal)
        u.assign("tallied_votes", leader_id, tuple(sorted(votes)))
        u.assign("leader_state", leader_id, LeaderState.ASSESS)

    elif state is LeaderState.ASSESS:
        votes = list(world.get("tallied_votes", leader_id, ()))
        cfg = world.cfg
        if cfg.weighted_diagnosis:
            weighted = [
                (Diagnosis(d), world.get("confidence_degree", m, 1.0))
                for m, d in votes
                if d
            ]
            assessment = assess_node_weighted(weighted)
        else:
            assessment = assess_node(
                world.get("failed_diagnoses", leader_id, 0),
                world.get("critical_diagnoses", leader_id, 0),
                world.get("normal_diagnoses", leader_id, 0),
            )
        if not any(d for _, d in votes):
            effects.append(
                StoreEffect.of(
                    "event",
                    step=world.step,
                    kind="insufficient_data",
                    leader=leader_id,
                    detail="assessment computed with zero recorded diagnoses",
                )
            )
        u.assign("assessment", leader_id, assessment)
        for monitor_id, diagnosis in votes:
            vote = Diagnosis(diagnosis) if diagnosis else None
            current = world.get("confidence_degree", monitor_id, 1.0)
            updated = update_confidence(vote, assessment, current, cfg)
            if updated != current:
                u.assign("confidence_degree", monitor_id, updated)
        u.assign("failed_diagnoses", leader_id, 0)
        u.assign("critical_diagnoses", leader_id, 0)
        u.assign("normal_diagnoses", leader_id, 0)
        u.assign("reporting_monitors", leader_id, 0)
        u.unset("tallied_votes", leader_id)
        u.assign("leader_state", leader_id, LeaderState.IDLE_LEADER)

    return u, effects
