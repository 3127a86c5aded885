"""Bounded temporal-property checking over explicit state graphs.

Properties use the concrete syntax of the verified model listings: an
optional ``forall $x in Set with`` quantifier around one of the supported
forms AG(p), AG(p implies AX q), AG(p implies EX q), AG(p implies EF q),
where p and q are boolean state predicates (equalities over locations,
counter sums, conjunction, negation). Exploration enumerates the declared
environment choices breadth-first up to a bound, merging duplicate states.

Bounded semantics, made explicit in every verdict:

* AG / AX are decided exactly on the explored graph; a frontier state has no
  outgoing edges, so an AX obligation there is vacuously met.
* Existential obligations (EX, EF) that cannot be discharged inside the
  graph are never reported as violations: the verdict is the explicit
  EF_TARGET_NOT_FOUND_UP_TO_BOUND.
* Every VIOLATED verdict carries a counterexample path that replays
  step-by-step through the kernel.
"""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional, Sequence, Union

from . import middleware
from .kernel import (
    Location,
    UpdateSet,
    World,
    canonical_value,
    resolve_location,
    step_world,
)
from .middleware import RuleSet
from .model import CeldsError, ControllerState, MonitorState

# --------------------------------------------------------------------------
# Property AST
# --------------------------------------------------------------------------


class PropertyParseError(CeldsError):
    pass


@dataclass(frozen=True)
class LocRef:
    func: str
    key: str  # agent id or quantified variable like $m

    def bind(self, env: dict[str, str]) -> "LocRef":
        key = env.get(self.key, self.key)
        return LocRef(self.func, key)

    def read(self, world: World) -> Any:
        return world.read(self.func, self.key)

    def render(self) -> str:
        return f"{self.func}({self.key})"


@dataclass(frozen=True)
class Atom:
    """location [+ location ...] = literal, or a bare boolean location."""

    lhs: tuple[LocRef, ...]
    rhs: Any = True

    def bind(self, env: dict[str, str]) -> "Atom":
        return Atom(tuple(ref.bind(env) for ref in self.lhs), self.rhs)

    def holds(self, world: World) -> bool:
        if len(self.lhs) == 1:
            value = self.lhs[0].read(world)
            if value is None:
                return False
            return canonical_value(value) == canonical_value(self.rhs)
        total = 0
        for ref in self.lhs:
            value = ref.read(world)
            if not isinstance(value, (int, float)):
                return False
            total += value
        return total == self.rhs

    def render(self) -> str:
        lhs = " + ".join(ref.render() for ref in self.lhs)
        if len(self.lhs) == 1 and self.rhs is True:
            return lhs
        rendered = {True: "true", False: "false"}.get(self.rhs, str(self.rhs))
        return f"{lhs} = {rendered}"


@dataclass(frozen=True)
class Not:
    inner: "StateFormula"

    def bind(self, env):
        return Not(self.inner.bind(env))

    def holds(self, world: World) -> bool:
        return not self.inner.holds(world)

    def render(self) -> str:
        return f"not({self.inner.render()})"


@dataclass(frozen=True)
class And:
    parts: tuple["StateFormula", ...]

    def bind(self, env):
        return And(tuple(p.bind(env) for p in self.parts))

    def holds(self, world: World) -> bool:
        return all(p.holds(world) for p in self.parts)

    def render(self) -> str:
        return " and ".join(
            f"({p.render()})" if isinstance(p, (Implies,)) else p.render() for p in self.parts
        )


@dataclass(frozen=True)
class Implies:
    antecedent: "StateFormula"
    consequent: "StateFormula"

    def bind(self, env):
        return Implies(self.antecedent.bind(env), self.consequent.bind(env))

    def holds(self, world: World) -> bool:
        return (not self.antecedent.holds(world)) or self.consequent.holds(world)

    def render(self) -> str:
        return f"({self.antecedent.render()}) implies ({self.consequent.render()})"


StateFormula = Union[Atom, Not, And, Implies]


class Form(str, Enum):
    AG = "AG"
    AG_AX = "AG_AX"
    AG_EX = "AG_EX"
    AG_EF = "AG_EF"


@dataclass(frozen=True)
class Property:
    """One checkable property, possibly quantified over an agent set."""

    form: Form
    p: StateFormula
    q: Optional[StateFormula] = None
    quantifier: Optional[tuple[str, str]] = None  # (variable, set name)
    text: str = ""

    def instances(self, world: World) -> list[tuple[str, StateFormula, Optional[StateFormula]]]:
        if self.quantifier is None:
            return [("", self.p, self.q)]
        var, set_name = self.quantifier
        out = []
        for agent in world.registry.quantifier_domain(set_name):
            env = {var: agent}
            out.append((agent, self.p.bind(env), self.q.bind(env) if self.q else None))
        return out


# --------------------------------------------------------------------------
# Property parser
# --------------------------------------------------------------------------

_PROP_TOKEN_RE = re.compile(
    r"""
    (?P<number>-?\d+(?:\.\d+)?)
  | (?P<var>\$[A-Za-z_][A-Za-z0-9_]*)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<symbol>[()=+])
  | (?P<junk>\S)
    """,
    re.VERBOSE,
)

_TEMPORAL = {"ag", "ax", "ex", "ef"}
_UNSUPPORTED = {"af", "eg", "au", "eu", "eg", "a", "e", "u", "until", "or", "exists"}


class _PropParser:
    def __init__(self, text: str):
        self.tokens: list[str] = []
        for match in _PROP_TOKEN_RE.finditer(text):
            kind = match.lastgroup
            if kind == "junk":
                raise PropertyParseError(f"unrecognized token {match.group()!r}")
            self.tokens.append(match.group())
        self.pos = 0

    def peek(self) -> Optional[str]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expect: Optional[str] = None) -> str:
        token = self.peek()
        if token is None:
            raise PropertyParseError("unexpected end of property")
        if expect is not None and token != expect:
            raise PropertyParseError(f"expected {expect!r}, found {token!r}")
        self.pos += 1
        return token

    # formula := implication; implication := conjunction ['implies' implication]
    def parse_formula(self):
        left = self.parse_conjunction()
        if self.peek() == "implies":
            self.next()
            right = self.parse_formula()
            return ("implies", left, right)
        return left

    def parse_conjunction(self):
        parts = [self.parse_unary()]
        while self.peek() == "and":
            self.next()
            parts.append(self.parse_unary())
        return parts[0] if len(parts) == 1 else ("and", tuple(parts))

    def parse_unary(self):
        token = self.peek()
        if token is None:
            raise PropertyParseError("unexpected end of property")
        lowered = token.lower()
        if lowered == "not":
            self.next()
            self.next("(")
            inner = self.parse_formula()
            self.next(")")
            return ("not", inner)
        if lowered in _TEMPORAL:
            self.next()
            self.next("(")
            inner = self.parse_formula()
            self.next(")")
            return (lowered, inner)
        if lowered in _UNSUPPORTED:
            raise PropertyParseError(f"unsupported operator {token}")
        if token == "(":
            self.next()
            inner = self.parse_formula()
            self.next(")")
            return inner
        return self.parse_atom()

    def parse_atom(self):
        refs = [self.parse_locref()]
        while self.peek() == "+":
            self.next()
            refs.append(self.parse_locref())
        if self.peek() == "=":
            self.next()
            rhs = self.parse_literal()
        else:
            rhs = True
        return ("atom", tuple(refs), rhs)

    def parse_locref(self) -> LocRef:
        func = self.next()
        if not re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", func):
            raise PropertyParseError(f"expected a function name, found {func!r}")
        if func.lower() in _UNSUPPORTED:
            raise PropertyParseError(f"unsupported operator {func}")
        self.next("(")
        key = self.next()
        self.next(")")
        func, key = resolve_location(func, key)
        return LocRef(func, key)

    def parse_literal(self) -> Any:
        token = self.next()
        if token == "true":
            return True
        if token == "false":
            return False
        if re.fullmatch(r"-?\d+", token):
            return int(token)
        if re.fullmatch(r"-?\d+\.\d+", token):
            return float(token)
        return token


def _build_state(node) -> StateFormula:
    """Convert raw parse nodes into state formulas, rejecting temporal ops."""
    tag = node[0]
    if tag == "atom":
        return Atom(node[1], node[2])
    if tag == "not":
        return Not(_build_state(node[1]))
    if tag == "and":
        return And(tuple(_build_state(p) for p in node[1]))
    if tag == "implies":
        return Implies(_build_state(node[1]), _build_state(node[2]))
    if tag in _TEMPORAL:
        raise PropertyParseError(f"nested temporal operator {tag} is not supported here")
    raise PropertyParseError(f"cannot interpret {tag!r} as a state predicate")


def parse_property(text: str) -> Property:
    """Parse one property in the concrete syntax of the model listings."""
    source = text.strip()
    cleaned = re.sub(r"(?i)^\s*CTLSPEC\s*", "", source)
    parser = _PropParser(cleaned)

    quantifier = None
    if parser.peek() == "(" and parser.tokens[parser.pos + 1 : parser.pos + 2] == ["forall"]:
        parser.next("(")
        parser.next("forall")
        var = parser.next()
        if not var.startswith("$"):
            raise PropertyParseError(f"quantified variable must start with $, found {var!r}")
        parser.next("in")
        set_name = parser.next()
        parser.next("with")
        quantifier = (var, set_name)
        body = parser.parse_formula()
        parser.next(")")
    elif parser.peek() == "forall":
        parser.next("forall")
        var = parser.next()
        if not var.startswith("$"):
            raise PropertyParseError(f"quantified variable must start with $, found {var!r}")
        parser.next("in")
        set_name = parser.next()
        parser.next("with")
        quantifier = (var, set_name)
        body = parser.parse_formula()
    else:
        body = parser.parse_formula()
    if parser.peek() is not None:
        raise PropertyParseError(f"trailing tokens after property: {parser.peek()!r}")

    if not (isinstance(body, tuple) and body[0] == "ag"):
        raise PropertyParseError("a property must be an ag(...) form")
    inner = body[1]

    if isinstance(inner, tuple) and inner[0] == "implies":
        antecedent, consequent = inner[1], inner[2]
        if isinstance(consequent, tuple) and consequent[0] in _TEMPORAL:
            op = consequent[0]
            if op == "ag":
                raise PropertyParseError("nested ag is not supported")
            form = {"ax": Form.AG_AX, "ex": Form.AG_EX, "ef": Form.AG_EF}[op]
            return Property(
                form=form,
                p=_build_state(antecedent),
                q=_build_state(consequent[1]),
                quantifier=quantifier,
                text=source,
            )
    return Property(form=Form.AG, p=_build_state(inner), quantifier=quantifier, text=source)


def parse_property_file(text: str) -> list[Property]:
    """Parse a property file: entries separated by blank lines or CTLSPEC markers."""
    stripped_lines = []
    for line in text.splitlines():
        stripped_lines.append(line.split("//", 1)[0])
    entries: list[str] = []
    current: list[str] = []
    for line in stripped_lines:
        if not line.strip():
            if current:
                entries.append(" ".join(current))
                current = []
        else:
            current.append(line.strip())
    if current:
        entries.append(" ".join(current))

    properties = []
    for entry in entries:
        pieces = re.split(r"(?i)\bCTLSPEC\b", entry)
        for piece in pieces:
            if piece.strip():
                properties.append(parse_property(piece))
    return properties


# --------------------------------------------------------------------------
# Bounded exploration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class HeartbeatOutcome:
    arrived: bool
    latency: Optional[float] = None


@dataclass
class ChoiceDecls:
    """Finite domains for every environment choice the exploration may face.

    ``heartbeat_per_run`` binds each monitor's heartbeat behaviour once per
    exploration branch instead of re-choosing every cycle, which keeps the
    graph small while still covering every behaviour profile.
    """

    heartbeat: tuple[HeartbeatOutcome, ...] = (HeartbeatOutcome(True, 5),)
    heartbeat_per_run: bool = True
    metrics: tuple[tuple[tuple[str, float], ...], ...] = ()
    repository: tuple[bool, ...] = (True,)
    action_outcomes: tuple[bool, ...] = (True,)

    def __post_init__(self) -> None:
        for name in ("heartbeat", "repository", "action_outcomes"):
            if not getattr(self, name):
                raise CeldsError(f"choice domain {name} must be non-empty")


DEFAULT_NORMAL_METRICS = (
    ("Latency", 5),
    ("CPU Usage", 10),
    ("Storage Usage", 15),
    ("Memory Usage", 10),
    ("Bandwidth", 50),
)


def _choice_points(world: World, decls: ChoiceDecls) -> list[tuple[Location, tuple[Any, ...], list[tuple[Location, Any]]]]:
    """Pending environment choices of a state.

    Each entry is (binding location, domain, shared writes); the domain
    values are opaque indexes resolved by _choice_writes.
    """
    points = []
    for monitor_id in world.registry.monitor_ids:
        if world.get("assigned_node", monitor_id) is None:
            continue
        if world.get("monitor_dismissed", monitor_id, False):
            continue
        state = MonitorState(world.get("monitor_state", monitor_id, MonitorState.ACTIVE))
        if state is MonitorState.WAIT_FOR_RESPONSE and not world.defined(
            "heartbeat_response_arrived", monitor_id
        ):
            bound = world.get("choice_heartbeat", monitor_id)
            if bound is not None and decls.heartbeat_per_run:
                points.append((("hb", monitor_id), (bound,), []))
            else:
                points.append((("hb", monitor_id), tuple(range(len(decls.heartbeat))), []))
        elif state is MonitorState.COLLECT_DATA and not world.defined(
            "monitor_measurements", monitor_id
        ):
            metrics = decls.metrics or (DEFAULT_NORMAL_METRICS,)
            points.append((("metrics", monitor_id), tuple(range(len(metrics))), []))
        elif state is MonitorState.RETRIEVE_DATA and not world.defined(
            "is_repository_available", monitor_id
        ):
            points.append((("repo", monitor_id), tuple(range(len(decls.repository))), []))

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
                points.append((("outcome", action_id), tuple(range(len(decls.action_outcomes))), []))
    return points


def _choice_writes(
    kind_key: tuple[str, str], index: int, decls: ChoiceDecls
) -> dict[Location, Any]:
    kind, key = kind_key
    if kind == "hb":
        outcome = decls.heartbeat[index]
        writes: dict[Location, Any] = {("heartbeat_response_arrived", key): outcome.arrived}
        if outcome.arrived:
            writes[("heartbeat_latency", key)] = outcome.latency
        if decls.heartbeat_per_run:
            writes[("choice_heartbeat", key)] = index
        return writes
    if kind == "metrics":
        metrics = decls.metrics or (DEFAULT_NORMAL_METRICS,)
        return {("monitor_measurements", key): metrics[index]}
    if kind == "repo":
        return {("is_repository_available", key): decls.repository[index]}
    return {("action_outcome", key): decls.action_outcomes[index]}


EdgeLabel = tuple[tuple[str, Any], ...]


@dataclass
class ReachabilityGraph:
    """All states reachable within ``bound`` steps under the declared choices."""

    states: dict[Any, World]
    edges: dict[Any, list[tuple[EdgeLabel, Any]]]
    depth: dict[Any, int]
    parent: dict[Any, tuple[Any, EdgeLabel]]
    initial: Any
    bound: int

    def __len__(self) -> int:
        return len(self.states)

    @property
    def initial_world(self) -> World:
        return self.states[self.initial]

    def successors(self, key: Any) -> list[tuple[EdgeLabel, Any]]:
        return self.edges.get(key, [])

    def path_to(self, key: Any) -> list[tuple[EdgeLabel, Any]]:
        """Edge labels and states from the initial state to ``key``."""
        path: list[tuple[EdgeLabel, Any]] = []
        while key != self.initial:
            parent_key, label = self.parent[key]
            path.append((label, key))
            key = parent_key
        path.reverse()
        return path

    def ordered_keys(self) -> list[Any]:
        return sorted(self.states, key=lambda k: (self.depth[k], repr(k)))


class ExplorationError(CeldsError):
    pass


def explore(
    world: World,
    decls: ChoiceDecls,
    bound: int,
    rules: Optional[RuleSet] = None,
) -> ReachabilityGraph:
    """Breadth-first enumeration of all choice combinations up to ``bound``.

    Duplicate states (by canonical location valuation) are merged; the step
    counter is not part of state identity.
    """
    rules = rules or RuleSet()

    def machine(w: World):
        return middleware.middleware_step(w, rules, None)

    initial_key = world.state_key()
    states = {initial_key: world}
    edges: dict[Any, list[tuple[EdgeLabel, Any]]] = {}
    depth = {initial_key: 0}
    parent: dict[Any, tuple[Any, EdgeLabel]] = {}
    queue: deque[Any] = deque([initial_key])

    while queue:
        key = queue.popleft()
        if depth[key] >= bound:
            continue
        current = states[key]
        base, _, _ = step_world(current, [machine])

        points = _choice_points(base, decls)
        assignments: list[dict[Location, Any]] = [{}]
        labels: list[EdgeLabel] = [()]
        for kind_key, domain, _shared in sorted(points, key=lambda p: p[0]):
            new_assignments = []
            new_labels = []
            for assignment, label in zip(assignments, labels):
                for index in domain:
                    writes = _choice_writes(kind_key, index, decls)
                    merged = dict(assignment)
                    merged.update(writes)
                    new_assignments.append(merged)
                    new_labels.append(
                        label + tuple((f"{f}({k})", canonical_value(v)) for (f, k), v in sorted(writes.items()))
                    )
            assignments = new_assignments
            labels = new_labels

        out_edges = []
        for assignment, label in zip(assignments, labels):
            successor = base.with_writes(assignment) if assignment else base
            successor_key = successor.state_key()
            if successor_key not in states:
                states[successor_key] = successor
                depth[successor_key] = depth[key] + 1
                parent[successor_key] = (key, label)
                queue.append(successor_key)
            out_edges.append((label, successor_key))
        edges[key] = out_edges

    return ReachabilityGraph(
        states=states, edges=edges, depth=depth, parent=parent, initial=initial_key, bound=bound
    )


def replay_path(
    world: World, labels: Sequence[EdgeLabel], rules: Optional[RuleSet] = None
) -> list[World]:
    """Re-execute a counterexample path; returns the visited worlds."""
    rules = rules or RuleSet()

    def machine(w: World):
        return middleware.middleware_step(w, rules, None)

    visited = [world]
    for label in labels:
        world, _, _ = step_world(world, [machine])
        writes: dict[Location, Any] = {}
        for location_text, value in label:
            func, key = location_text[:-1].split("(", 1)
            writes[(func, key)] = value
        if writes:
            world = world.with_writes(writes)
        visited.append(world)
    return visited


# --------------------------------------------------------------------------
# Verdicts
# --------------------------------------------------------------------------


class VerdictStatus(str, Enum):
    HOLDS_UP_TO_BOUND = "HOLDS_UP_TO_BOUND"
    VIOLATED = "VIOLATED"
    EF_TARGET_NOT_FOUND_UP_TO_BOUND = "EF_TARGET_NOT_FOUND_UP_TO_BOUND"


@dataclass
class Counterexample:
    """A replayable path from the initial state to the violation."""

    labels: list[EdgeLabel]
    digests: list[str]
    description: str


@dataclass
class Verdict:
    status: VerdictStatus
    property_text: str
    bound: int
    counterexample: Optional[Counterexample] = None
    detail: str = ""


def check(prop: Property, graph: ReachabilityGraph) -> Verdict:
    """Decide one property on an explored graph.

    Quantified properties are conjunctions over their instances: any violated
    instance makes the property VIOLATED (with that instance's shortest
    counterexample); otherwise any undischarged existential obligation makes
    it inconclusive; otherwise it holds up to the bound.
    """
    world = graph.initial_world
    inconclusive_detail: Optional[str] = None

    for instance, p, q in prop.instances(world):
        for key in graph.ordered_keys():
            state = graph.states[key]

            if prop.form is Form.AG:
                if not p.holds(state):
                    return _violated(prop, graph, key, None, instance, "state predicate is false")
                continue

            if not p.holds(state):
                continue
            successors = graph.successors(key)

            if prop.form is Form.AG_AX:
                assert q is not None
                for label, successor_key in successors:
                    if not q.holds(graph.states[successor_key]):
                        return _violated(
                            prop, graph, key, (label, successor_key), instance,
                            "a successor falsifies the AX obligation",
                        )

            elif prop.form is Form.AG_EX:
                assert q is not None
                if successors:
                    if not any(q.holds(graph.states[sk]) for _, sk in successors):
                        return _violated(
                            prop, graph, key, None, instance,
                            "no successor satisfies the EX obligation",
                        )
                else:
                    inconclusive_detail = (
                        f"EX obligation at the exploration frontier (instance {instance or 'main'})"
                    )

            elif prop.form is Form.AG_EF:
                assert q is not None
                if not _reaches(graph, key, q):
                    inconclusive_detail = (
                        f"no EF witness within the bound (instance {instance or 'main'})"
                    )

    if prop.form is Form.AG or prop.form is Form.AG_AX:
        return Verdict(VerdictStatus.HOLDS_UP_TO_BOUND, prop.text, graph.bound)
    if inconclusive_detail is not None:
        return Verdict(
            VerdictStatus.EF_TARGET_NOT_FOUND_UP_TO_BOUND,
            prop.text,
            graph.bound,
            detail=inconclusive_detail,
        )
    return Verdict(VerdictStatus.HOLDS_UP_TO_BOUND, prop.text, graph.bound)


def _reaches(graph: ReachabilityGraph, start: Any, q: StateFormula) -> bool:
    seen = {start}
    frontier = deque([start])
    while frontier:
        key = frontier.popleft()
        if q.holds(graph.states[key]):
            return True
        for _, successor in graph.successors(key):
            if successor not in seen:
                seen.add(successor)
                frontier.append(successor)
    return False


def _violated(
    prop: Property,
    graph: ReachabilityGraph,
    key: Any,
    extra_edge: Optional[tuple[EdgeLabel, Any]],
    instance: str,
    reason: str,
) -> Verdict:
    path = graph.path_to(key)
    labels = [label for label, _ in path]
    digests = [graph.initial_world.digest()] + [graph.states[k].digest() for _, k in path]
    if extra_edge is not None:
        label, successor_key = extra_edge
        labels.append(label)
        digests.append(graph.states[successor_key].digest())
    description = reason if not instance else f"{reason} (instance {instance})"
    return Verdict(
        VerdictStatus.VIOLATED,
        prop.text,
        graph.bound,
        counterexample=Counterexample(labels=labels, digests=digests, description=description),
    )
