"""Leader engine: tallying, majority assessment, confidence management.

The assessment oracle below executes the nested max-comparison tree
literally and independently of the implementation; the equivalence test
walks every counter triple with components up to 5.
"""

import itertools

import pytest
from hypothesis import given, strategies as st

from celds.kernel import UpdateSet
from celds.leader import (
    assess_node,
    assess_node_weighted,
    reset_counters,
    step_leader,
    tally_diagnoses,
    update_confidence,
)
from celds.model import (
    Config,
    ContractViolation,
    Diagnosis,
    LeaderAgent,
    LeaderState,
    MonitorAgent,
    MonitorState,
)


def literal_comparison_tree(failed, critical, normal):
    """Independent oracle: the nested max-comparisons, transcribed verbatim."""
    if max(failed, critical) == failed:
        if max(failed, normal) == failed:
            return Diagnosis.FAILED
        return Diagnosis.NORMAL
    if max(critical, normal) == critical:
        return Diagnosis.CRITICAL
    return Diagnosis.NORMAL


def make_monitor(mid, diagnosis=None, confidence=1.0):
    return MonitorAgent(
        id=mid,
        assigned_node="node_1",
        state=MonitorState.ACTIVE,
        diagnosis=diagnosis,
        trigger_gossip=False,
        confidence_degree=confidence,
        current_measurements=None,
        pending_heartbeat=None,
    )


def make_leader(state=LeaderState.EVALUATE, counters=(0, 0, 0), assessment=None):
    failed, critical, normal = counters
    return LeaderAgent(
        id="leader_1",
        node="node_1",
        state=state,
        failed_diagnoses=failed,
        critical_diagnoses=critical,
        normal_diagnoses=normal,
        assessment=assessment,
    )


class TestTally:
    def test_single_failed_vote_with_two_abstentions(self):
        monitors = [
            make_monitor("monitor_1", Diagnosis.FAILED),
            make_monitor("monitor_2"),
            make_monitor("monitor_3"),
        ]
        assert tally_diagnoses(make_leader(), monitors) == (1, 0, 0)

    def test_empty_monitor_list(self):
        assert tally_diagnoses(make_leader(), []) == (0, 0, 0)

    def test_direct_counting(self):
        monitors = [
            make_monitor("monitor_1", Diagnosis.NORMAL),
            make_monitor("monitor_2", Diagnosis.NORMAL),
            make_monitor("monitor_3", Diagnosis.CRITICAL),
        ]
        assert tally_diagnoses(make_leader(), monitors) == (0, 1, 2)

    def test_requires_evaluate_state(self):
        with pytest.raises(ContractViolation):
            tally_diagnoses(make_leader(state=LeaderState.IDLE_LEADER), [])


class TestAssessNode:
    def test_single_failure_dominates(self):
        assert assess_node(1, 0, 0) is Diagnosis.FAILED

    def test_normal_majority(self):
        assert assess_node(1, 0, 2) is Diagnosis.NORMAL

    def test_three_way_tie_is_pessimistic(self):
        assert assess_node(1, 1, 1) is Diagnosis.FAILED

    def test_zero_counters_follow_the_comparison_tree(self):
        assert assess_node(0, 0, 0) is Diagnosis.FAILED

    def test_exhaustive_equivalence_with_literal_oracle(self):
        for triple in itertools.product(range(6), repeat=3):
            assert assess_node(*triple) is literal_comparison_tree(*triple), triple

    @given(st.integers(min_value=0, max_value=50))
    def test_pessimistic_ties(self, n):
        assert assess_node(n, n, n) is Diagnosis.FAILED
        if n > 0:
            assert assess_node(0, n, n) is Diagnosis.CRITICAL

    def test_negative_counters_rejected(self):
        with pytest.raises(ContractViolation):
            assess_node(-1, 0, 0)


class TestAssessNodeWeighted:
    def test_uniform_unit_weights_reduce_to_plain_counts(self):
        for triple in itertools.product(range(4), repeat=3):
            failed, critical, normal = triple
            votes = (
                [(Diagnosis.FAILED, 1.0)] * failed
                + [(Diagnosis.CRITICAL, 1.0)] * critical
                + [(Diagnosis.NORMAL, 1.0)] * normal
            )
            assert assess_node_weighted(votes) is assess_node(*triple)

    def test_high_confidence_failure_outweighs_two_normals(self):
        votes = [(Diagnosis.FAILED, 0.9), (Diagnosis.NORMAL, 0.3), (Diagnosis.NORMAL, 0.3)]
        assert assess_node_weighted(votes) is Diagnosis.FAILED  # 0.9 vs 0.6

    def test_weighted_tie_resolved_pessimistically(self):
        votes = [(Diagnosis.CRITICAL, 0.5), (Diagnosis.NORMAL, 0.5)]
        assert assess_node_weighted(votes) is Diagnosis.CRITICAL


class TestUpdateConfidence:
    def test_agreement_is_rewarded(self):
        cfg = Config()
        assert update_confidence(Diagnosis.FAILED, Diagnosis.FAILED, 0.80, cfg) == pytest.approx(0.85)

    def test_disagreement_is_penalized(self):
        cfg = Config()
        assert update_confidence(Diagnosis.NORMAL, Diagnosis.FAILED, 0.80, cfg) == pytest.approx(0.70)

    def test_abstention_is_untouched(self):
        cfg = Config()
        assert update_confidence(None, Diagnosis.FAILED, 0.80, cfg) == 0.80

    def test_clamped_to_unit_interval(self):
        cfg = Config()
        assert update_confidence(Diagnosis.FAILED, Diagnosis.FAILED, 0.98, cfg) == 1.0
        assert update_confidence(Diagnosis.NORMAL, Diagnosis.FAILED, 0.05, cfg) == 0.0

    @given(
        st.sampled_from([Diagnosis.NORMAL, Diagnosis.CRITICAL, Diagnosis.FAILED, None]),
        st.sampled_from([Diagnosis.NORMAL, Diagnosis.CRITICAL, Diagnosis.FAILED]),
        st.floats(min_value=0.0, max_value=1.0),
    )
    def test_monotone_in_agreement(self, vote, assessment, c):
        cfg = Config()
        updated = update_confidence(vote, assessment, c, cfg)
        assert 0.0 <= updated <= 1.0
        if vote is None:
            assert updated == c
        elif vote is assessment:
            assert updated >= c
        else:
            assert updated <= c

    def test_rejects_confidence_outside_unit_interval(self):
        with pytest.raises(ContractViolation):
            update_confidence(None, Diagnosis.NORMAL, 1.2, Config())


class TestResetCounters:
    def test_returns_to_idle_with_zero_counters(self):
        leader = make_leader(
            state=LeaderState.ASSESS, counters=(2, 1, 0), assessment=Diagnosis.FAILED
        )
        reset = reset_counters(leader)
        assert reset.state is LeaderState.IDLE_LEADER
        assert (reset.failed_diagnoses, reset.critical_diagnoses, reset.normal_diagnoses) == (0, 0, 0)
        assert reset.assessment is Diagnosis.FAILED

    def test_idempotent_on_zero_counters(self):
        leader = make_leader(
            state=LeaderState.ASSESS, counters=(0, 0, 0), assessment=Diagnosis.NORMAL
        )
        assert reset_counters(reset_counters(leader)) == reset_counters(leader)

    def test_reset_before_assessment_is_a_contract_violation(self):
        with pytest.raises(ContractViolation):
            reset_counters(make_leader(state=LeaderState.EVALUATE))


class TestStepLeader:
    def test_evaluate_tallies_only_defined_diagnoses(self, world):
        w = world.with_writes(
            {
                ("leader_state", "leader_1"): LeaderState.EVALUATE,
                ("diagnosis", "monitor_1"): Diagnosis.FAILED,
            }
        )
        updates, _ = step_leader(w, "leader_1")
        merged = updates.merged()
        assert merged[("failed_diagnoses", "leader_1")] == 1
        assert merged[("normal_diagnoses", "leader_1")] == 0
        assert merged[("reporting_monitors", "leader_1")] == 1
        assert merged[("leader_state", "leader_1")] == LeaderState.ASSESS

    def test_assess_records_warning_on_zero_votes(self, world):
        w = world.with_writes(
            {
                ("leader_state", "leader_1"): LeaderState.ASSESS,
                ("tallied_votes", "leader_1"): (
                    ("monitor_1", ""),
                    ("monitor_2", ""),
                    ("monitor_3", ""),
                ),
            }
        )
        updates, effects = step_leader(w, "leader_1")
        merged = updates.merged()
        assert merged[("assessment", "leader_1")] is Diagnosis.FAILED
        assert any(dict(e.record).get("kind") == "insufficient_data" for e in effects)

    def test_assess_updates_confidences_from_tally_snapshot(self, world):
        w = world.with_writes(
            {
                ("leader_state", "leader_1"): LeaderState.ASSESS,
                ("failed_diagnoses", "leader_1"): 1,
                ("normal_diagnoses", "leader_1"): 2,
                ("tallied_votes", "leader_1"): (
                    ("monitor_1", "FAILED"),
                    ("monitor_2", "NORMAL"),
                    ("monitor_3", "NORMAL"),
                ),
                ("confidence_degree", "monitor_1"): 0.8,
                ("confidence_degree", "monitor_2"): 0.8,
            }
        )
        updates, _ = step_leader(w, "leader_1")
        merged = updates.merged()
        # assessment is NORMAL (2 normals beat 1 failed), so the dissenting
        # monitor is penalized and the agreeing ones rewarded
        assert merged[("assessment", "leader_1")] is Diagnosis.NORMAL
        assert merged[("confidence_degree", "monitor_1")] == pytest.approx(0.7)
        assert merged[("confidence_degree", "monitor_2")] == pytest.approx(0.85)
        assert merged[("leader_state", "leader_1")] == LeaderState.IDLE_LEADER
        assert merged[("failed_diagnoses", "leader_1")] == 0

    def test_weighted_mode_uses_confidences(self, world):
        cfg = Config(weighted_diagnosis=True)
        w = world.with_writes(
            {
                ("leader_state", "leader_1"): LeaderState.ASSESS,
                ("tallied_votes", "leader_1"): (
                    ("monitor_1", "FAILED"),
                    ("monitor_2", "NORMAL"),
                    ("monitor_3", "NORMAL"),
                ),
                ("confidence_degree", "monitor_1"): 0.9,
                ("confidence_degree", "monitor_2"): 0.3,
                ("confidence_degree", "monitor_3"): 0.3,
            }
        )
        w.cfg = cfg
        updates, _ = step_leader(w, "leader_1")
        assert updates.merged()[("assessment", "leader_1")] is Diagnosis.FAILED
