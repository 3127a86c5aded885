"""Scenario scripts: set / step / check against a running world.

The grammar is deliberately small (see docs/formats.md):

    set <function>(<key>) := <value> ;
    step
    check <function>(<key>) = <value> ;

with ``//`` comments, arbitrary whitespace, values that may be identifiers,
numbers, booleans, strings, lists, and tuple lists. ``set`` is restricted to
monitored and shared locations: the machine's controlled locations are
read-only to scripts. Execution continues past failing checks and collects
every result.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Optional, Union

from . import middleware
from .kernel import (
    ConflictError,
    DERIVED_FUNCTIONS,
    Location,
    MONITORED_FUNCTIONS,
    SHARED_FUNCTIONS,
    UpdateSet,
    World,
    canonical_value,
    resolve_location,
    step_world,
)
from .middleware import RuleSet
from .model import CeldsError, LeaderState, NodeMetrics

KNOWN_FUNCTIONS = frozenset(
    {
        "monitor_state",
        "diagnosis",
        "trigger_gossip",
        "confidence_degree",
        "monitor_dismissed",
        "hb_waited",
        "current_measurements",
        "heartbeat_response_arrived",
        "heartbeat_latency",
        "monitor_measurements",
        "is_repository_available",
        "assigned_monitors",
        "assigned_node",
        "has_leader",
        "leader_state",
        "failed_diagnoses",
        "critical_diagnoses",
        "normal_diagnoses",
        "reporting_monitors",
        "tallied_votes",
        "assessment",
        "middleware_state",
        "controller_state",
        "actionController_state",
        "acknowledged_controllers",
        "controller_mailbox",
        "mail_cursor",
        "pending_notification",
        "completed_preds",
        "controller_started",
        "ack_phase",
        "ack_waited",
        "session_status",
        "action_outcome",
    }
    | DERIVED_FUNCTIONS
)

SETTABLE_FUNCTIONS = MONITORED_FUNCTIONS | SHARED_FUNCTIONS


class ScenarioSyntaxError(CeldsError):
    def __init__(self, line: int, token: str, message: str):
        self.line = line
        self.token = token
        super().__init__(f"line {line}: {message} (at {token!r})")


class ScenarioError(CeldsError):
    """A well-formed scenario attempted something scripts are not allowed to do."""


@dataclass(frozen=True)
class SetCmd:
    location: Location
    value: Any

    def render(self) -> str:
        func, key = self.location
        return f"set {func}({key}) := {render_value(self.value)};"


@dataclass(frozen=True)
class StepCmd:
    def render(self) -> str:
        return "step"


@dataclass(frozen=True)
class CheckCmd:
    location: Location
    expected: Any

    def render(self) -> str:
        func, key = self.location
        return f"check {func}({key}) = {render_value(self.expected)};"


Command = Union[SetCmd, StepCmd, CheckCmd]


@dataclass(frozen=True)
class Scenario:
    commands: tuple[Command, ...]


def render_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, str):
        return value if re.fullmatch(r"[A-Za-z_][A-Za-z0-9_]*", value) else f'"{value}"'
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, list):
        return "[" + ", ".join(render_value(v) for v in value) + "]"
    if isinstance(value, tuple):
        return "(" + ", ".join(render_value(v) for v in value) + ")"
    raise CeldsError(f"cannot render value {value!r}")


_TOKEN_RE = re.compile(
    r"""
    (?P<string>"[^"]*")
  | (?P<number>-?\d+(?:\.\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<assign>:=)
  | (?P<symbol>[()\[\],;=])
  | (?P<junk>\S+)
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    line: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("//", 1)[0]
        for match in _TOKEN_RE.finditer(line):
            kind = match.lastgroup or "junk"
            token = match.group()
            if kind == "junk":
                raise ScenarioSyntaxError(line_no, token, "unrecognized token")
            tokens.append(_Token(kind, token, line_no))
    return tokens


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self, expect_kind: Optional[str] = None, expect_text: Optional[str] = None) -> _Token:
        token = self.peek()
        if token is None:
            last = self.tokens[-1] if self.tokens else _Token("junk", "", 1)
            raise ScenarioSyntaxError(last.line, "<end>", "unexpected end of scenario")
        if expect_kind and token.kind != expect_kind:
            raise ScenarioSyntaxError(token.line, token.text, f"expected {expect_kind}")
        if expect_text and token.text != expect_text:
            raise ScenarioSyntaxError(token.line, token.text, f"expected {expect_text!r}")
        self.pos += 1
        return token

    def parse_location(self) -> Location:
        func = self.next("ident")
        if func.text not in KNOWN_FUNCTIONS:
            raise ScenarioSyntaxError(func.line, func.text, "unknown function name")
        self.next(expect_text="(")
        key = self.next("ident")
        self.next(expect_text=")")
        return resolve_location(func.text, key.text)

    def parse_value(self) -> Any:
        token = self.peek()
        if token is None:
            raise ScenarioSyntaxError(1, "<end>", "expected a value")
        if token.kind == "string":
            self.next()
            return token.text[1:-1]
        if token.kind == "number":
            self.next()
            return float(token.text) if "." in token.text else int(token.text)
        if token.kind == "ident":
            self.next()
            if token.text == "true":
                return True
            if token.text == "false":
                return False
            return token.text
        if token.text == "[":
            return self._parse_sequence("[", "]", list)
        if token.text == "(":
            return self._parse_sequence("(", ")", tuple)
        raise ScenarioSyntaxError(token.line, token.text, "expected a value")

    def _parse_sequence(self, opener: str, closer: str, factory) -> Any:
        self.next(expect_text=opener)
        items = []
        token = self.peek()
        if token is not None and token.text == closer:
            self.next()
            return factory(items)
        while True:
            items.append(self.parse_value())
            token = self.next()
            if token.text == closer:
                return factory(items)
            if token.text != ",":
                raise ScenarioSyntaxError(token.line, token.text, f"expected ',' or {closer!r}")


def parse_scenario(text: str) -> Scenario:
    """Parse scenario text, validating every location's function name."""
    parser = _Parser(_tokenize(text))
    commands: list[Command] = []
    while True:
        token = parser.peek()
        if token is None:
            break
        if token.kind != "ident" or token.text not in {"set", "step", "check"}:
            raise ScenarioSyntaxError(token.line, token.text, "expected set, step or check")
        if token.text == "step":
            parser.next()
            maybe_semi = parser.peek()
            if maybe_semi is not None and maybe_semi.text == ";":
                parser.next()
            commands.append(StepCmd())
        elif token.text == "set":
            parser.next()
            location = parser.parse_location()
            func, _ = location
            if func not in SETTABLE_FUNCTIONS:
                raise ScenarioSyntaxError(
                    token.line, func, "set targets a controlled (machine-owned) location"
                )
            parser.next("assign")
            value = parser.parse_value()
            parser.next(expect_text=";")
            commands.append(SetCmd(location, value))
        else:
            parser.next()
            location = parser.parse_location()
            parser.next(expect_text="=")
            value = parser.parse_value()
            parser.next(expect_text=";")
            commands.append(CheckCmd(location, value))
    return Scenario(tuple(commands))


def _coerce_set(world: World, location: Location, value: Any) -> dict[Location, Any]:
    """Turn one scripted write into world writes, with setup conveniences.

    Assigning a node's monitor list also points each monitor back at the
    node; naming a leader materializes it idle with zeroed counters.
    """
    func, key = location
    writes: dict[Location, Any] = {}
    if func in ("monitor_measurements", "current_measurements"):
        pairs = tuple(tuple(p) for p in value)
        NodeMetrics.from_pairs(pairs)
        writes[location] = pairs
    elif func == "assigned_monitors":
        monitors = tuple(value)
        writes[location] = monitors
        for monitor_id in monitors:
            writes[("assigned_node", monitor_id)] = key
    elif func == "has_leader":
        writes[location] = value
        if not world.defined("leader_state", value):
            writes[("leader_state", value)] = LeaderState.IDLE_LEADER
            writes[("failed_diagnoses", value)] = 0
            writes[("critical_diagnoses", value)] = 0
            writes[("normal_diagnoses", value)] = 0
            writes[("reporting_monitors", value)] = 0
    elif func == "leader_state":
        writes[location] = LeaderState(value)
    else:
        writes[location] = value
    return writes


@dataclass(frozen=True)
class CheckResult:
    location: str
    expected: Any
    actual: Any
    passed: bool


@dataclass
class ScenarioReport:
    checks: list[CheckResult] = field(default_factory=list)
    steps_run: int = 0
    conflicts: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.conflicts and all(c.passed for c in self.checks)


def execute_scenario(
    scenario: Scenario, world: World, rules: Optional[RuleSet] = None, store: Any = None
) -> tuple[ScenarioReport, World]:
    """Run a parsed scenario against a world.

    ``set`` commands write the current state before the next step; ``step``
    runs one machine step with no automatic environment (scripts own the
    environment); ``check`` compares structurally and execution continues
    past failures. Returns the report and the final world.
    """
    rules = rules or RuleSet()
    report = ScenarioReport()

    def machine(w: World):
        return middleware.middleware_step(w, rules, store)

    for command in scenario.commands:
        if isinstance(command, SetCmd):
            world = world.with_writes(_coerce_set(world, command.location, command.value))
        elif isinstance(command, StepCmd):
            try:
                world, _, _ = step_world(world, [machine])
                report.steps_run += 1
            except ConflictError as exc:
                report.conflicts.append(str(exc))
        else:
            func, key = command.location
            actual = world.read(func, key)
            passed = canonical_value(actual) == canonical_value(_normalize(command.expected))
            report.checks.append(
                CheckResult(
                    location=f"{func}({key})",
                    expected=canonical_value(_normalize(command.expected)),
                    actual=canonical_value(actual) if actual is not None else "undef",
                    passed=passed,
                )
            )
    return report, world


def _normalize(value: Any) -> Any:
    if isinstance(value, list):
        return tuple(_normalize(v) for v in value)
    if isinstance(value, tuple):
        return tuple(_normalize(v) for v in value)
    return value
