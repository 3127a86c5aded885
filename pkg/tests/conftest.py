"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

from pathlib import Path

import pytest

from celds.harness import NodeSpec, SessionTemplate, Topology, build_world
from celds.model import ActionSpec, Config, WorkflowSchema

ASSETS = Path(__file__).resolve().parent.parent / "assets"


def single_node_topology(**kwargs) -> Topology:
    defaults = dict(nodes=[NodeSpec("node_1")], monitor_pool=3, preassigned=True)
    defaults.update(kwargs)
    return Topology(**defaults)


def parallel_session_template(outcomes=None, unresponsive=()) -> SessionTemplate:
    schema = WorkflowSchema(
        actions=(
            ActionSpec("action_1", "replace_service"),
            ActionSpec("action_2", "reconfigure_calls"),
            ActionSpec("action_3", "verify_service"),
        ),
        dependencies=(),
    )
    return SessionTemplate(
        schema=schema,
        outcomes=outcomes or {},
        unresponsive=tuple(unresponsive),
        inference_area=("node_1",),
    )


def chain_session_template(outcomes=None) -> SessionTemplate:
    schema = WorkflowSchema(
        actions=(
            ActionSpec("action_1", "replace_service"),
            ActionSpec("action_2", "reconfigure_calls"),
            ActionSpec("action_3", "verify_service"),
        ),
        dependencies=(("action_1", "action_2"), ("action_2", "action_3")),
    )
    return SessionTemplate(schema=schema, outcomes=outcomes or {}, inference_area=("node_1",))


@pytest.fixture
def topology():
    return single_node_topology()


@pytest.fixture
def world(topology):
    return build_world(topology, Config())


def pytest_runtest_logreport(report):
    """Print one pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    status = "PASS" if report.passed else "FAIL"
    print(f"\n[acceptance] {name}: {status}", flush=True)
