"""Domain type invariants and the world validator."""

import itertools

import pytest
from hypothesis import given, strategies as st

from celds.model import (
    ActionSpec,
    Config,
    Diagnosis,
    Heartbeat,
    ContractViolation,
    NodeMetrics,
    Notification,
    NotificationKind,
    ProblemDescriptor,
    WorkflowSchema,
    validate_world,
)

DIAGNOSES = [Diagnosis.NORMAL, Diagnosis.CRITICAL, Diagnosis.FAILED]


class TestDiagnosisOrdering:
    def test_pessimism_order(self):
        assert Diagnosis.NORMAL < Diagnosis.CRITICAL < Diagnosis.FAILED

    def test_total_antisymmetric_transitive(self):
        for a, b in itertools.product(DIAGNOSES, repeat=2):
            assert (a < b) or (b < a) or (a == b)  # total
            if a < b:
                assert not b < a  # antisymmetric
        for a, b, c in itertools.product(DIAGNOSES, repeat=3):
            if a < b and b < c:
                assert a < c  # transitive

    def test_max_picks_the_pessimistic_value(self):
        assert max(Diagnosis.NORMAL, Diagnosis.FAILED) is Diagnosis.FAILED
        assert max(Diagnosis.NORMAL, Diagnosis.CRITICAL) is Diagnosis.CRITICAL


class TestNodeMetrics:
    def test_valid_roundtrip_through_pairs(self):
        metrics = NodeMetrics(latency=5, cpu_usage=10, storage_usage=15, memory_usage=10, bandwidth=50)
        assert NodeMetrics.from_pairs(metrics.as_pairs()) == metrics

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(latency=-1, cpu_usage=10, storage_usage=10, memory_usage=10, bandwidth=50),
            dict(latency=5, cpu_usage=101, storage_usage=10, memory_usage=10, bandwidth=50),
            dict(latency=5, cpu_usage=10, storage_usage=-2, memory_usage=10, bandwidth=50),
            dict(latency=5, cpu_usage=10, storage_usage=10, memory_usage=10, bandwidth=-3),
        ],
    )
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            NodeMetrics(**kwargs)

    def test_from_pairs_rejects_unknown_and_missing_labels(self):
        with pytest.raises(ValueError):
            NodeMetrics.from_pairs([("Latency", 5), ("Nonsense", 1)])
        with pytest.raises(ValueError):
            NodeMetrics.from_pairs([("Latency", 5)])


class TestHeartbeat:
    def test_latency_read_before_response_is_a_contract_violation(self):
        hb = Heartbeat(target="node_1", sent_at=0)
        with pytest.raises(ContractViolation):
            hb.observed_latency()

    def test_latency_read_after_response(self):
        hb = Heartbeat(target="node_1", sent_at=0, response_arrived=True, latency=21)
        assert hb.observed_latency() == 21


class TestWorkflowSchema:
    def test_rejects_cycles(self):
        actions = (ActionSpec("a", "x"), ActionSpec("b", "y"))
        with pytest.raises(ValueError):
            WorkflowSchema(actions=actions, dependencies=(("a", "b"), ("b", "a")))

    def test_rejects_self_loop(self):
        with pytest.raises(ValueError):
            WorkflowSchema(actions=(ActionSpec("a", "x"),), dependencies=(("a", "a"),))

    def test_rejects_unknown_action_in_dependency(self):
        with pytest.raises(ValueError):
            WorkflowSchema(actions=(ActionSpec("a", "x"),), dependencies=(("a", "z"),))

    def test_roots_and_predecessors(self):
        schema = WorkflowSchema(
            actions=(ActionSpec("a", "x"), ActionSpec("b", "y"), ActionSpec("c", "z")),
            dependencies=(("a", "b"), ("a", "c")),
        )
        assert schema.roots() == ("a",)
        assert schema.predecessors("b") == frozenset({"a"})

    @given(st.integers(min_value=2, max_value=6), st.randoms())
    def test_any_ring_of_dependencies_is_rejected(self, n, rnd):
        actions = tuple(ActionSpec(f"a{i}", "cap") for i in range(n))
        ring = tuple((f"a{i}", f"a{(i + 1) % n}") for i in range(n))
        with pytest.raises(ValueError):
            WorkflowSchema(actions=actions, dependencies=ring)

    @given(st.integers(min_value=1, max_value=6))
    def test_forward_edges_always_accepted(self, n):
        actions = tuple(ActionSpec(f"a{i}", "cap") for i in range(n))
        deps = tuple((f"a{i}", f"a{i + 1}") for i in range(n - 1))
        schema = WorkflowSchema(actions=actions, dependencies=deps)
        assert len(schema.actions) == n


class TestProblemDescriptor:
    def test_rejects_out_of_range_numeric(self):
        features = {
            "response_time": 500.0,  # range is 0..100
            "price": 20.0,
            "portability": "container",
            "region": "eu",
            "availability": 100.0,
            "input_bandwidth": 50.0,
            "output_bandwidth": 50.0,
        }
        with pytest.raises(ValueError):
            ProblemDescriptor(features=features)

    def test_rejects_wrong_feature_set(self):
        with pytest.raises(ValueError):
            ProblemDescriptor(features={"response_time": 5.0})


class TestConfig:
    def test_defaults_are_valid(self):
        cfg = Config()
        assert cfg.redundancy_k == 3
        assert cfg.max_latency == 20
        assert cfg.min_confidence_degree == 0.5

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(redundancy_k=0),
            dict(min_confidence_degree=1.5),
            dict(critical_cpu=130),
            dict(confidence_penalty=-0.1),
            dict(heartbeat_wait_steps=0),
        ],
    )
    def test_rejects_out_of_range(self, kwargs):
        with pytest.raises(ValueError):
            Config(**kwargs)

    def test_from_mapping_rejects_unknown_keys(self):
        with pytest.raises(ValueError):
            Config.from_mapping({"no_such_option": 1})


class TestNotification:
    def test_value_roundtrip(self):
        n = Notification(NotificationKind.ACTION_FAILED, "actionController_2")
        assert Notification.from_value(n.as_value()) == n

    def test_session_start_signal_has_no_sender(self):
        n = Notification(NotificationKind.ACTION_STARTING)
        assert Notification.from_value(n.as_value()).sender is None


class TestValidateWorld:
    def test_fresh_world_is_clean(self, world):
        assert validate_world(world) == []

    def test_idle_leader_with_counters_is_flagged(self, world):
        broken = world.with_writes({("failed_diagnoses", "leader_1"): 2})
        violations = validate_world(broken)
        assert len(violations) == 1
        assert "leader_1" in violations[0].subject

    def test_confidence_out_of_range_is_flagged(self, world):
        broken = world.with_writes({("confidence_degree", "monitor_2"): 1.3})
        violations = validate_world(broken)
        assert any("monitor_2" in v.subject and "confidence" in v.message for v in violations)

    def test_gossip_without_diagnosis_is_flagged(self, world):
        broken = world.with_writes({("trigger_gossip", "monitor_1"): True})
        violations = validate_world(broken)
        assert any("trigger_gossip" in v.message for v in violations)
