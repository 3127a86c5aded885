"""Case-based adaptation: retrieval, enactment through controllers, retention.

The decision phase matches a problem descriptor against the case repository
with a weighted per-feature similarity and a threshold gate. The enactment
phase instantiates the retrieved workflow schema as one controller per
action; controllers coordinate through broadcast notifications that every
session member acknowledges, and an action only runs once its dependency
predecessors have completed. A single action failure, or a member that never
acknowledges, aborts the whole session.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Optional, Sequence

from .kernel import Registry, SessionSpec, StoreEffect, UpdateSet, World
from .model import (
    AdaptationCase,
    CeldsError,
    ContractViolation,
    ControllerState,
    Diagnosis,
    FeatureKind,
    Notification,
    NotificationKind,
    OutcomeRecord,
    ProblemDescriptor,
    SessionStatus,
    WorkflowSchema,
)


class InstantiationError(CeldsError):
    """A workflow schema cannot be turned into a session."""


# --------------------------------------------------------------------------
# Decision phase
# --------------------------------------------------------------------------


def similarity(
    a: ProblemDescriptor,
    b: ProblemDescriptor,
    weights: Optional[Mapping[str, float]] = None,
) -> float:
    """Weighted similarity of two problem descriptors, in [0, 1].

    Numeric features contribute 1 - |a - b| / range, categorical ones 1 on
    exact match and 0 otherwise. Weights must cover exactly the declared
    features and sum to 1; omitted, they are uniform.
    """
    if not a.same_schema_as(b):
        raise ContractViolation("descriptors declare different feature sets")
    names = [spec.name for spec in a.specs]
    if weights is None:
        weights = {name: 1.0 / len(names) for name in names}
    if set(weights) != set(names):
        raise ContractViolation("weights do not cover the declared features")
    total = sum(weights.values())
    if abs(total - 1.0) > 1e-9:
        raise ContractViolation(f"weights sum to {total}, expected 1")

    score = 0.0
    for spec in a.specs:
        va, vb = a.features[spec.name], b.features[spec.name]
        if spec.kind is FeatureKind.NUMERIC:
            contribution = 1.0 - abs(va - vb) / spec.span
        else:
            contribution = 1.0 if va == vb else 0.0
        score += weights[spec.name] * contribution
    return min(1.0, max(0.0, score))


@dataclass(frozen=True)
class RetrievalResult:
    case: Optional[AdaptationCase]
    best_similarity: float
    reason: str  # "match" | "empty_repository" | "below_threshold"


@dataclass
class CaseRepository:
    """Ordered collection of adaptation cases with deterministic retrieval."""

    cases: list[AdaptationCase] = field(default_factory=list)
    weights: Optional[dict[str, float]] = None

    def add(self, case: AdaptationCase) -> None:
        if any(c.id == case.id for c in self.cases):
            raise CeldsError(f"duplicate case id {case.id}")
        self.cases.append(case)

    def next_id(self) -> str:
        existing = {c.id for c in self.cases}
        n = len(self.cases) + 1
        while f"case_{n}" in existing:
            n += 1
        return f"case_{n}"

    def find_matching(
        self, problem: ProblemDescriptor, schema: WorkflowSchema
    ) -> Optional[AdaptationCase]:
        for case in self.cases:
            if case.problem.key() == problem.key() and case.solution == schema:
                return case
        return None

    def replace(self, old: AdaptationCase, new: AdaptationCase) -> None:
        self.cases[self.cases.index(old)] = new


def retrieve_case(problem: ProblemDescriptor, repo: CaseRepository, cfg) -> RetrievalResult:
    """Pick the most similar case at or above the similarity threshold.

    Ties break toward the case with the most recent successful outcome, then
    the lowest case id, so identical inputs always retrieve the same case.
    """
    if not repo.cases:
        return RetrievalResult(None, 0.0, "empty_repository")
    scored = []
    for case in repo.cases:
        sim = similarity(problem, case.problem, repo.weights)
        last_success = case.last_success_step()
        scored.append((-sim, -(last_success if last_success is not None else -1), case.id, case))
    scored.sort(key=lambda row: row[:3])
    neg_sim, _, _, best = scored[0]
    best_sim = -neg_sim
    if best_sim < cfg.similarity_threshold:
        return RetrievalResult(None, best_sim, "below_threshold")
    return RetrievalResult(best, best_sim, "match")


def retain_case(
    problem: ProblemDescriptor,
    schema: WorkflowSchema,
    outcome: bool,
    repo: CaseRepository,
    enacted_at: int = 0,
) -> AdaptationCase:
    """Record an enactment outcome, appending a new case for novel problems.

    History is append-only: retaining the same data twice yields two history
    entries.
    """
    record = OutcomeRecord(enacted_at=enacted_at, succeeded=outcome)
    existing = repo.find_matching(problem, schema)
    if existing is not None:
        updated = existing.with_outcome(record)
        repo.replace(existing, updated)
        return updated
    case = AdaptationCase(
        id=repo.next_id(), problem=problem, solution=schema, outcome_history=(record,)
    )
    repo.add(case)
    return case


def evaluate_adaptation(post_assessment: Optional[Diagnosis]) -> bool:
    """An adaptation succeeded iff the next assessment afterwards is NORMAL.

    ``None`` means no assessment arrived within the exploration bound, which
    counts as failure.
    """
    return post_assessment is Diagnosis.NORMAL


# --------------------------------------------------------------------------
# Enactment phase
# --------------------------------------------------------------------------

_START = (NotificationKind.ACTION_STARTING.value, "")


def _controller_name(action_id: str, taken: set[str], session_id: str) -> str:
    _, _, suffix = action_id.rpartition("_")
    candidate = f"actionController_{suffix if suffix.isdigit() else action_id}"
    if candidate in taken:
        candidate = f"{session_id}_{candidate}"
    return candidate


def instantiate_solution(
    world: World,
    schema: WorkflowSchema,
    *,
    session_id: Optional[str] = None,
    inference_area: Iterable[str] = (),
    unresponsive: Iterable[str] = (),
) -> tuple[SessionSpec, dict]:
    """Create one controller per action and deliver the session-start signal.

    Dependency roots receive a synthetic ACTION_STARTING notification so the
    protocol begins without external input. Sessions whose inference area
    overlaps a currently running session are rejected.

    Returns the session spec (already registered) and the location writes
    that place the new controllers into the world.
    """
    if not schema.actions:
        raise InstantiationError("cannot instantiate an empty schema")
    area = frozenset(inference_area)
    registry = world.registry
    for sid in registry.session_ids:
        status = world.get("session_status", sid)
        if status == SessionStatus.RUNNING and area & registry.sessions[sid].inference_area:
            raise InstantiationError(
                f"inference area {sorted(area)} overlaps running session {sid}"
            )

    sid = session_id or f"session_{len(registry.sessions) + 1}"
    if sid in registry.sessions:
        raise InstantiationError(f"duplicate session id {sid}")
    taken = set(registry.controller_ids)
    controllers = []
    for action in schema.actions:
        name = _controller_name(action.id, taken, sid)
        taken.add(name)
        controllers.append(name)
    spec = SessionSpec(
        id=sid,
        schema=schema,
        controllers=tuple(controllers),
        inference_area=area,
        unresponsive=frozenset(unresponsive),
    )
    registry.sessions[sid] = spec

    roots = set(schema.roots())
    writes: dict = {("session_status", sid): SessionStatus.RUNNING}
    for action, controller in zip(schema.actions, controllers):
        is_root = action.id in roots
        writes[("controller_state", controller)] = (
            ControllerState.NOTIFICATION_RECEIVED if is_root else ControllerState.WAITING_NOTIFICATION
        )
        writes[("controller_mailbox", controller)] = (_START,) if is_root else ()
        writes[("mail_cursor", controller)] = 0
        writes[("acknowledged_controllers", controller)] = 0
        writes[("controller_started", controller)] = False
        writes[("completed_preds", controller)] = ()
    return spec, writes


def _deliver(
    world: World, spec: SessionSpec, sender: str, notification: Notification, u: UpdateSet
) -> None:
    value = notification.as_value()
    for other in spec.controllers:
        if other == sender:
            continue
        u.add("controller_mailbox", other, (value,))
        state = world.get("controller_state", other, ControllerState.WAITING_NOTIFICATION)
        if ControllerState(state) is ControllerState.WAITING_NOTIFICATION:
            u.assign("controller_state", other, ControllerState.NOTIFICATION_RECEIVED)


def broadcast_notification(
    world: World, controller_id: str, notification: Notification, session: SessionSpec
) -> UpdateSet:
    """Broadcast to every other session member and await acknowledgements.

    The broadcaster's acknowledgement counter restarts at 1 (its own), and it
    moves to WAITING_FOR_ACKNOWLEDGEMENT until the counter reaches the
    session size.
    """
    if controller_id not in session.controllers:
        raise ContractViolation(f"{controller_id} does not belong to session {session.id}")
    u = UpdateSet()
    _deliver(world, session, controller_id, notification, u)
    u.assign("acknowledged_controllers", controller_id, 1)
    u.assign("ack_phase", controller_id, (
        "completing" if notification.kind is NotificationKind.ACTION_COMPLETED else "starting"
    ))
    u.assign("ack_waited", controller_id, 0)
    u.assign("controller_state", controller_id, ControllerState.WAITING_FOR_ACKNOWLEDGEMENT)
    return u


def acknowledge_notification(world: World, controller_id: str, broadcaster: str) -> UpdateSet:
    """Acknowledge the pending notification of a NOTIFICATION_RECEIVED controller.

    Moves the receiver to ASSESS_NOTIFICATION and increments the broadcaster's
    acknowledgement counter by exactly one; in any other state this is a no-op.
    """
    spec = world.registry.session_of_controller(controller_id)
    if spec is None or broadcaster not in spec.controllers:
        raise ContractViolation(f"unknown broadcaster {broadcaster}")
    u = UpdateSet()
    state = world.get("controller_state", controller_id, ControllerState.WAITING_NOTIFICATION)
    if ControllerState(state) is not ControllerState.NOTIFICATION_RECEIVED:
        return u
    mailbox = world.get("controller_mailbox", controller_id, ())
    cursor = world.get("mail_cursor", controller_id, 0)
    if cursor >= len(mailbox):
        return u
    u.assign("pending_notification", controller_id, mailbox[cursor])
    u.assign("mail_cursor", controller_id, cursor + 1)
    u.add("acknowledged_controllers", broadcaster, 1)
    u.assign("controller_state", controller_id, ControllerState.ASSESS_NOTIFICATION)
    return u


def trigger_action(
    world: World,
    controller_id: str,
    session: SessionSpec,
    outcome: Optional[bool] = None,
) -> tuple[UpdateSet, list[StoreEffect]]:
    """Run the controller's action and broadcast its outcome.

    Success broadcasts ACTION_COMPLETED and waits for acknowledgements;
    failure broadcasts ACTION_FAILED and aborts the session abruptly.
    """
    action_id = session.action_for(controller_id)
    if outcome is None:
        outcome = world.get("action_outcome", action_id)
    if outcome is None:
        raise ContractViolation(f"outcome oracle undefined for {action_id}")
    u = UpdateSet()
    effects: list[StoreEffect] = []
    if outcome:
        u.extend(
            broadcast_notification(
                world, controller_id, Notification(NotificationKind.ACTION_COMPLETED, controller_id), session
            )
        )
    else:
        _deliver(
            world, session, controller_id, Notification(NotificationKind.ACTION_FAILED, controller_id), u
        )
        u.assign("session_status", session.id, SessionStatus.ABORTED)
        u.assign("controller_state", controller_id, ControllerState.TERMINATED)
        effects.append(
            StoreEffect.of(
                "event",
                step=world.step,
                kind="session_aborted",
                session=session.id,
                detail=f"action {action_id} failed",
            )
        )
    return u, effects


def trigger_execute(world: World, action_id: str) -> bool:
    """Derived predicate: the action's controller has signalled it will run."""
    spec = world.registry.session_of_action(action_id)
    if spec is None:
        return False
    controller = spec.controller_for(action_id)
    state = world.get("controller_state", controller, ControllerState.WAITING_NOTIFICATION)
    return (
        ControllerState(state) is ControllerState.WAITING_FOR_ACKNOWLEDGEMENT
        and world.get("ack_phase", controller) == "starting"
    )


def step_controller(world: World, controller_id: str) -> tuple[UpdateSet, list[StoreEffect]]:
    """One transition of the controller state machine."""
    u = UpdateSet()
    effects: list[StoreEffect] = []
    spec = world.registry.session_of_controller(controller_id)
    if spec is None:
        return u, effects
    if controller_id in spec.unresponsive:
        return u, effects

    state = ControllerState(
        world.get("controller_state", controller_id, ControllerState.WAITING_NOTIFICATION)
    )
    if state is ControllerState.TERMINATED:
        return u, effects

    status = world.get("session_status", spec.id, SessionStatus.RUNNING)
    if SessionStatus(status) is SessionStatus.ABORTED:
        u.assign("controller_state", controller_id, ControllerState.TERMINATED)
        if world.defined("pending_notification", controller_id):
            u.unset("pending_notification", controller_id)
        return u, effects

    mailbox = world.get("controller_mailbox", controller_id, ())
    cursor = world.get("mail_cursor", controller_id, 0)
    unread = mailbox[cursor:]

    if state is ControllerState.WAITING_NOTIFICATION:
        if unread:
            u.assign("controller_state", controller_id, ControllerState.NOTIFICATION_RECEIVED)

    elif state is ControllerState.NOTIFICATION_RECEIVED:
        if unread:
            head = unread[0]
            u.assign("pending_notification", controller_id, head)
            u.assign("mail_cursor", controller_id, cursor + 1)
            if head[1]:
                u.add("acknowledged_controllers", head[1], 1)
            u.assign("controller_state", controller_id, ControllerState.ASSESS_NOTIFICATION)
        else:
            u.assign("controller_state", controller_id, ControllerState.WAITING_NOTIFICATION)

    elif state is ControllerState.ASSESS_NOTIFICATION:
        pending = world.get("pending_notification", controller_id)
        if pending is None:
            u.assign("controller_state", controller_id, ControllerState.WAITING_NOTIFICATION)
            return u, effects
        kind, sender = pending
        kind = NotificationKind(kind)
        action_id = spec.action_for(controller_id)
        preds = spec.schema.predecessors(action_id)
        completed = set(world.get("completed_preds", controller_id, ()))
        started = world.get("controller_started", controller_id, False)

        if kind is NotificationKind.ACTION_FAILED:
            u.assign("session_status", spec.id, SessionStatus.ABORTED)
            u.assign("controller_state", controller_id, ControllerState.TERMINATED)
            u.unset("pending_notification", controller_id)
            return u, effects

        if kind is NotificationKind.ACTION_COMPLETED and sender in preds:
            completed.add(sender)
            u.assign("completed_preds", controller_id, tuple(sorted(completed)))
            relevant = True
        elif kind is NotificationKind.ACTION_STARTING and not sender and not preds:
            relevant = True  # session-start signal, and this controller is a root
        else:
            relevant = False

        if relevant and not started and preds <= completed:
            u.extend(
                broadcast_notification(
                    world,
                    controller_id,
                    Notification(NotificationKind.ACTION_STARTING, controller_id),
                    spec,
                )
            )
            u.assign("controller_started", controller_id, True)
        else:
            u.assign("controller_state", controller_id, ControllerState.WAITING_NOTIFICATION)
        u.unset("pending_notification", controller_id)

    elif state is ControllerState.WAITING_FOR_ACKNOWLEDGEMENT:
        n = len(spec.controllers)
        acks = world.get("acknowledged_controllers", controller_id, 0)
        phase = world.get("ack_phase", controller_id, "")
        if acks >= n:
            u.assign("acknowledged_controllers", controller_id, 0)
            u.unset("ack_phase", controller_id)
            u.unset("ack_waited", controller_id)
            if phase == "starting":
                u.assign("controller_state", controller_id, ControllerState.ACTION_RUNNING)
            else:
                u.assign("controller_state", controller_id, ControllerState.READY_FOR_REMOVAL)
        elif unread:
            # Keep acknowledging neighbours while waiting for our own acks,
            # otherwise concurrent broadcasters would starve each other.
            u.assign("mail_cursor", controller_id, len(mailbox))
            for message in unread:
                if message[1]:
                    u.add("acknowledged_controllers", message[1], 1)
        else:
            waited = world.get("ack_waited", controller_id, 0) + 1
            if waited >= world.cfg.ack_wait_steps:
                u.assign("controller_state", controller_id, ControllerState.CONTROLLER_ACKNOW_FAILED)
                u.assign("session_status", spec.id, SessionStatus.ABORTED)
                effects.append(
                    StoreEffect.of(
                        "event",
                        step=world.step,
                        kind="acknowledgement_shortfall",
                        session=spec.id,
                        controller=controller_id,
                        acknowledged=acks,
                        expected=n,
                    )
                )
            else:
                u.assign("ack_waited", controller_id, waited)

    elif state is ControllerState.ACTION_RUNNING:
        produced, emitted = trigger_action(world, controller_id, spec)
        u.extend(produced)
        effects.extend(emitted)

    elif state is ControllerState.CONTROLLER_ACKNOW_FAILED:
        u.assign("controller_state", controller_id, ControllerState.TERMINATED)

    elif state is ControllerState.READY_FOR_REMOVAL:
        if unread:
            u.assign("mail_cursor", controller_id, len(mailbox))
            for message in unread:
                if message[1]:
                    u.add("acknowledged_controllers", message[1], 1)

    return u, effects


def step_session(world: World, session_id: str) -> tuple[UpdateSet, list[StoreEffect]]:
    """Mark a session COMPLETED once every controller is ready for removal."""
    u = UpdateSet()
    effects: list[StoreEffect] = []
    spec = world.registry.sessions[session_id]
    status = SessionStatus(world.get("session_status", session_id, SessionStatus.RUNNING))
    if status is not SessionStatus.RUNNING:
        return u, effects
    states = [
        ControllerState(
            world.get("controller_state", c, ControllerState.WAITING_NOTIFICATION)
        )
        for c in spec.controllers
    ]
    if states and all(s is ControllerState.READY_FOR_REMOVAL for s in states):
        u.assign("session_status", session_id, SessionStatus.COMPLETED)
        effects.append(
            StoreEffect.of("event", step=world.step, kind="session_completed", session=session_id)
        )
    return u, effects
