"""Update-set merging, conflict detection, and world state identity."""

import pytest

from celds.kernel import (
    ConflictError,
    UNSET,
    UpdateSet,
    World,
    canonical_value,
    resolve_location,
    step_world,
)
from celds.model import CeldsError, Diagnosis


class TestMerging:
    def test_disjoint_updates_all_apply(self):
        u = UpdateSet()
        u.assign("diagnosis", "monitor_1", Diagnosis.FAILED)
        u.assign("diagnosis", "monitor_2", Diagnosis.NORMAL)
        merged = u.merged()
        assert merged[("diagnosis", "monitor_1")] is Diagnosis.FAILED
        assert merged[("diagnosis", "monitor_2")] is Diagnosis.NORMAL

    def test_equal_writes_to_one_location_agree(self):
        u = UpdateSet()
        u.assign("leader_state", "leader_1", "EVALUATE")
        u.assign("leader_state", "leader_1", "EVALUATE")
        assert u.merged()[("leader_state", "leader_1")] == "EVALUATE"

    def test_conflicting_writes_raise_with_location_and_values(self):
        u = UpdateSet()
        u.assign("assessment", "leader_1", Diagnosis.FAILED)
        u.assign("assessment", "leader_1", Diagnosis.NORMAL)
        with pytest.raises(ConflictError) as excinfo:
            u.merged()
        assert excinfo.value.location == ("assessment", "leader_1")
        assert set(map(canonical_value, excinfo.value.values)) == {"FAILED", "NORMAL"}

    def test_additive_increments_sum(self):
        u = UpdateSet()
        for _ in range(4):
            u.add("acknowledged_controllers", "c1", 1)
        assert u.merged()[("acknowledged_controllers", "c1")] == ("\x00delta", 4)

    def test_additive_assign_must_be_sole_writer(self):
        u = UpdateSet()
        u.assign("acknowledged_controllers", "c1", 1)
        u.add("acknowledged_controllers", "c1", 1)
        with pytest.raises(ConflictError):
            u.merged()

    def test_add_to_exclusive_location_is_rejected(self):
        u = UpdateSet()
        with pytest.raises(CeldsError):
            u.add("assessment", "leader_1", 1)

    def test_mailbox_appends_concatenate_in_canonical_order(self):
        u = UpdateSet()
        u.add("controller_mailbox", "c1", (("ACTION_STARTING", "b"),))
        u.add("controller_mailbox", "c1", (("ACTION_STARTING", "a"),))
        merged = u.merged()[("controller_mailbox", "c1")]
        assert merged == ("\x00extend", (("ACTION_STARTING", "a"), ("ACTION_STARTING", "b")))


class TestWorldEvolution:
    def test_apply_deltas_and_extends(self, world):
        w = world.with_writes(
            {("acknowledged_controllers", "c1"): 1, ("controller_mailbox", "c1"): ()}
        )
        u = UpdateSet()
        u.add("acknowledged_controllers", "c1", 1)
        u.add("acknowledged_controllers", "c1", 1)
        u.add("controller_mailbox", "c1", (("ACTION_COMPLETED", "x"),))
        w2 = w.apply(u.merged())
        assert w2.get("acknowledged_controllers", "c1") == 3
        assert w2.get("controller_mailbox", "c1") == (("ACTION_COMPLETED", "x"),)

    def test_unset_removes_location(self, world):
        u = UpdateSet()
        u.unset("confidence_degree", "monitor_1")
        w2 = world.apply(u.merged())
        assert not w2.defined("confidence_degree", "monitor_1")

    def test_step_counter_is_not_part_of_state_identity(self, world):
        later = world.apply({})
        assert later.step == world.step + 1
        assert later.state_key() == world.state_key()
        assert later.digest() == world.digest()

    def test_digest_changes_with_state(self, world):
        other = world.with_writes({("confidence_degree", "monitor_1"): 0.25})
        assert other.digest() != world.digest()

    def test_conflicting_step_leaves_world_unchanged(self, world):
        digest_before = world.digest()

        def rule_a(w):
            u = UpdateSet()
            u.assign("assessment", "leader_1", Diagnosis.FAILED)
            return u, []

        def rule_b(w):
            u = UpdateSet()
            u.assign("assessment", "leader_1", Diagnosis.NORMAL)
            return u, []

        with pytest.raises(ConflictError):
            step_world(world, [rule_a, rule_b])
        assert world.digest() == digest_before
        assert not world.defined("assessment", "leader_1")


class TestLocationAliases:
    def test_heartbeat_keys_resolve_to_monitors(self):
        assert resolve_location("heartbeat_latency", "heartbeat_2") == (
            "heartbeat_latency",
            "monitor_2",
        )

    def test_controller_state_alias(self):
        assert resolve_location("actionController_state", "actionController_1") == (
            "controller_state",
            "actionController_1",
        )

    def test_plain_locations_untouched(self):
        assert resolve_location("monitor_state", "monitor_1") == ("monitor_state", "monitor_1")
