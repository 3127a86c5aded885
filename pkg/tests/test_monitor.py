"""Monitor engine: heartbeat evaluation, diagnosis, the state cycle."""

import pytest
from hypothesis import given, strategies as st

from celds.harness import Stores
from celds.kernel import step_world
from celds.middleware import middleware_step
from celds.model import (
    Config,
    ContractViolation,
    Diagnosis,
    Heartbeat,
    HeartbeatStatus,
    MonitorState,
    NodeMetrics,
)
from celds.monitor import (
    REPOSITORY_UNAVAILABLE,
    assign_diagnosis,
    evaluate_heartbeat,
    heartbeat_timeout,
    is_problem_discovered,
    retrieve_history,
    step_monitor,
)


def answered(latency):
    return Heartbeat(target="node_1", sent_at=0, response_arrived=True, latency=latency)


NORMAL_METRICS = NodeMetrics(latency=5, cpu_usage=10, storage_usage=15, memory_usage=10, bandwidth=50)


class TestEvaluateHeartbeat:
    def test_prompt_response_is_ok(self):
        assert evaluate_heartbeat(answered(5), 20) is HeartbeatStatus.OK

    def test_over_budget_is_late(self):
        assert evaluate_heartbeat(answered(21), 20) is HeartbeatStatus.LATE

    def test_boundary_latency_is_ok(self):
        assert evaluate_heartbeat(answered(20), 20) is HeartbeatStatus.OK

    def test_no_response_is_missing(self):
        hb = Heartbeat(target="node_1", sent_at=0, response_arrived=False)
        assert evaluate_heartbeat(hb, 20) is HeartbeatStatus.MISSING


class TestAssignDiagnosis:
    def test_healthy_metrics_are_normal(self):
        assert assign_diagnosis(NORMAL_METRICS, HeartbeatStatus.OK, Config()) is Diagnosis.NORMAL

    @pytest.mark.parametrize(
        "field,value",
        [("cpu_usage", 90), ("cpu_usage", 85), ("memory_usage", 85), ("storage_usage", 90)],
    )
    def test_threshold_breach_is_critical(self, field, value):
        cfg = Config()
        kwargs = dict(latency=5, cpu_usage=10, storage_usage=15, memory_usage=10, bandwidth=50)
        kwargs[field] = value
        metrics = NodeMetrics(**kwargs)
        assert assign_diagnosis(metrics, HeartbeatStatus.OK, cfg) is Diagnosis.CRITICAL

    def test_just_below_thresholds_is_normal(self):
        metrics = NodeMetrics(latency=5, cpu_usage=84.9, storage_usage=89.9, memory_usage=84.9, bandwidth=0)
        assert assign_diagnosis(metrics, HeartbeatStatus.OK, Config()) is Diagnosis.NORMAL

    def test_unreachable_node_is_failed(self):
        assert assign_diagnosis(None, HeartbeatStatus.MISSING, Config()) is Diagnosis.FAILED
        assert assign_diagnosis(NORMAL_METRICS, HeartbeatStatus.LATE, Config()) is Diagnosis.FAILED

    def test_ok_without_metrics_is_a_contract_violation(self):
        with pytest.raises(ContractViolation):
            assign_diagnosis(None, HeartbeatStatus.OK, Config())

    @given(
        st.floats(min_value=0, max_value=100),
        st.floats(min_value=0, max_value=100),
        st.floats(min_value=0, max_value=100),
    )
    def test_pure_function(self, cpu, mem, storage):
        cfg = Config()
        metrics = NodeMetrics(latency=5, cpu_usage=cpu, storage_usage=storage, memory_usage=mem, bandwidth=50)
        first = assign_diagnosis(metrics, HeartbeatStatus.OK, cfg)
        assert assign_diagnosis(metrics, HeartbeatStatus.OK, cfg) is first
        expected_critical = cpu >= 85 or mem >= 85 or storage >= 90
        assert (first is Diagnosis.CRITICAL) == expected_critical


class TestRetrieveHistory:
    def test_reads_back_seeded_entries(self, world):
        stores = Stores()
        stores.append_record("data", step=1, node="node_1", monitor="monitor_1", measurements=None)
        stores.append_record("data", step=2, node="node_1", monitor="monitor_2", measurements=None)
        stores.append_record("data", step=2, node="node_9", monitor="monitor_9", measurements=None)
        w = world.with_writes({("monitor_state", "monitor_1"): MonitorState.RETRIEVE_DATA})
        rows = retrieve_history(w, "monitor_1", stores)
        assert len(rows) == 2

    def test_unavailable_repository_returns_marker(self, world):
        w = world.with_writes(
            {
                ("monitor_state", "monitor_1"): MonitorState.RETRIEVE_DATA,
                ("is_repository_available", "monitor_1"): False,
            }
        )
        assert retrieve_history(w, "monitor_1", Stores()) == REPOSITORY_UNAVAILABLE

    def test_empty_store_returns_empty_list(self, world):
        w = world.with_writes({("monitor_state", "monitor_1"): MonitorState.RETRIEVE_DATA})
        assert retrieve_history(w, "monitor_1", Stores()) == []

    def test_outside_retrieve_state_is_a_contract_violation(self, world):
        with pytest.raises(ContractViolation):
            retrieve_history(world, "monitor_1", Stores())


def advance(world, writes=None, store=None):
    """One middleware step after applying environment writes."""
    if writes:
        world = world.with_writes(writes)
    new_world, _, effects = step_world(world, [lambda w: middleware_step(w, store=store)])
    return new_world, effects


class TestMonitorCycle:
    def test_unassigned_monitor_is_a_contract_violation(self, world):
        from celds.kernel import UNSET

        w = world.with_writes({("assigned_node", "monitor_1"): UNSET})
        with pytest.raises(ContractViolation):
            step_monitor(w, "monitor_1")

    def test_full_healthy_cycle(self, world):
        w, _ = advance(world)  # ACTIVE -> WAIT
        assert w.get("monitor_state", "monitor_1") is MonitorState.WAIT_FOR_RESPONSE
        w, _ = advance(
            w,
            {
                ("heartbeat_response_arrived", "monitor_1"): True,
                ("heartbeat_latency", "monitor_1"): 5,
                ("heartbeat_response_arrived", "monitor_2"): True,
                ("heartbeat_latency", "monitor_2"): 5,
                ("heartbeat_response_arrived", "monitor_3"): True,
                ("heartbeat_latency", "monitor_3"): 5,
            },
        )
        assert w.get("monitor_state", "monitor_1") is MonitorState.COLLECT_DATA
        metrics = NORMAL_METRICS.as_pairs()
        w, _ = advance(
            w,
            {
                ("monitor_measurements", "monitor_1"): metrics,
                ("monitor_measurements", "monitor_2"): metrics,
                ("monitor_measurements", "monitor_3"): metrics,
            },
        )
        assert w.get("monitor_state", "monitor_1") is MonitorState.RETRIEVE_DATA
        w, _ = advance(w)
        assert w.get("monitor_state", "monitor_1") is MonitorState.ASSIGN_DIAGNOSIS
        w, _ = advance(w)
        assert w.get("monitor_state", "monitor_1") is MonitorState.LOG_DATA
        assert w.get("diagnosis", "monitor_1") is Diagnosis.NORMAL
        store = Stores()
        w, effects = advance(w, store=store)
        assert w.get("monitor_state", "monitor_1") is MonitorState.ACTIVE
        assert len(store.data) == 3  # one row per monitor
        assert not w.defined("heartbeat_response_arrived", "monitor_1")

    def test_late_response_reports_problem_with_failed_diagnosis(self, world):
        w, _ = advance(world)
        w, _ = advance(
            w,
            {
                ("heartbeat_response_arrived", "monitor_1"): True,
                ("heartbeat_latency", "monitor_1"): 21,
            },
        )
        assert w.get("monitor_state", "monitor_1") is MonitorState.REPORT_PROBLEM
        assert w.get("diagnosis", "monitor_1") is Diagnosis.FAILED
        w, _ = advance(w)
        assert w.get("monitor_state", "monitor_1") is MonitorState.LOG_DATA
        assert w.get("trigger_gossip", "monitor_1") is True

    def test_missing_response_times_out_after_wait_steps(self, world):
        w, _ = advance(world)
        w = w.with_writes({("heartbeat_response_arrived", "monitor_1"): False})
        for _ in range(Config().heartbeat_wait_steps):
            assert w.get("monitor_state", "monitor_1") is MonitorState.WAIT_FOR_RESPONSE
            w, _ = advance(w)
        assert w.get("monitor_state", "monitor_1") is MonitorState.WAIT_FOR_RESPONSE
        w, _ = advance(w)
        assert w.get("monitor_state", "monitor_1") is MonitorState.REPORT_PROBLEM
        assert w.get("diagnosis", "monitor_1") is Diagnosis.FAILED

    def test_collect_waits_for_measurements(self, world):
        w, _ = advance(world)
        w, _ = advance(
            w,
            {
                ("heartbeat_response_arrived", "monitor_1"): True,
                ("heartbeat_latency", "monitor_1"): 5,
            },
        )
        assert w.get("monitor_state", "monitor_1") is MonitorState.COLLECT_DATA
        w, _ = advance(w)
        assert w.get("monitor_state", "monitor_1") is MonitorState.COLLECT_DATA

    def test_unavailable_repository_still_reaches_diagnosis(self, world):
        w = world.with_writes(
            {
                ("monitor_state", "monitor_1"): MonitorState.RETRIEVE_DATA,
                ("is_repository_available", "monitor_1"): False,
                ("current_measurements", "monitor_1"): NORMAL_METRICS.as_pairs(),
            }
        )
        updates, _ = step_monitor(w, "monitor_1", Stores())
        assert updates.merged()[("monitor_state", "monitor_1")] is MonitorState.ASSIGN_DIAGNOSIS

    def test_report_is_followed_by_log_within_the_cycle(self, world):
        w = world.with_writes(
            {
                ("monitor_state", "monitor_1"): MonitorState.REPORT_PROBLEM,
                ("diagnosis", "monitor_1"): Diagnosis.FAILED,
            }
        )
        updates, _ = step_monitor(w, "monitor_1")
        merged = updates.merged()
        assert merged[("monitor_state", "monitor_1")] is MonitorState.LOG_DATA
        assert merged[("trigger_gossip", "monitor_1")] is True


class TestDerivedPredicates:
    def test_timeout_on_late_response(self, world):
        w = world.with_writes(
            {
                ("monitor_state", "monitor_1"): MonitorState.WAIT_FOR_RESPONSE,
                ("heartbeat_response_arrived", "monitor_1"): True,
                ("heartbeat_latency", "monitor_1"): 21,
            }
        )
        assert heartbeat_timeout(w, "monitor_1") is True
        assert is_problem_discovered(w, "monitor_1") is True

    def test_no_timeout_while_waiting_within_budget(self, world):
        w = world.with_writes(
            {
                ("monitor_state", "monitor_1"): MonitorState.WAIT_FOR_RESPONSE,
                ("hb_waited", "monitor_1"): 1,
            }
        )
        assert heartbeat_timeout(w, "monitor_1") is False
        assert is_problem_discovered(w, "monitor_1") is False

    def test_problem_discovered_at_diagnosis_with_breached_metrics(self, world):
        spiked = NodeMetrics(latency=5, cpu_usage=90, storage_usage=15, memory_usage=10, bandwidth=50)
        w = world.with_writes(
            {
                ("monitor_state", "monitor_1"): MonitorState.ASSIGN_DIAGNOSIS,
                ("current_measurements", "monitor_1"): spiked.as_pairs(),
            }
        )
        assert is_problem_discovered(w, "monitor_1") is True

    def test_reading_through_world_read(self, world):
        assert world.read("is_problem_discovered", "monitor_1") is False
        assert world.read("heartbeat_timeout", "monitor_2") is False
