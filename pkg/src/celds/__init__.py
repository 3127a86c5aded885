"""Deterministic middleware simulator for multi-cloud monitoring and adaptation.

Redundant heartbeat monitors feed a per-node leader that assesses health by
majority vote and manages monitor confidence; diagnosed problems drive a
case-based adaptation engine whose workflow actions are enacted by
broadcast/acknowledge controllers. The package also ships a scenario script
runner and a bounded temporal-property checker over the same kernel.
"""

from .adaptation import (
    CaseRepository,
    RetrievalResult,
    acknowledge_notification,
    broadcast_notification,
    evaluate_adaptation,
    instantiate_solution,
    retain_case,
    retrieve_case,
    similarity,
    trigger_action,
)
from .checker import (
    ChoiceDecls,
    Counterexample,
    HeartbeatOutcome,
    Property,
    PropertyParseError,
    ReachabilityGraph,
    Verdict,
    VerdictStatus,
    check,
    explore,
    parse_property,
    parse_property_file,
    replay_path,
)
from .harness import (
    AdaptiveRun,
    FaultInjection,
    FaultKind,
    Simulation,
    Stores,
    Topology,
    NodeSpec,
    SessionTemplate,
    build_world,
    inject_fault,
    simulate,
)
from .kernel import (
    ConflictError,
    Location,
    Registry,
    SessionSpec,
    StoreEffect,
    UNSET,
    Update,
    UpdateSet,
    World,
    step_world,
)
from .leader import (
    assess_node,
    assess_node_weighted,
    reset_counters,
    step_leader,
    tally_diagnoses,
    update_confidence,
)
from .middleware import (
    AssignmentError,
    ElectionError,
    RuleSet,
    assign_monitors_to_node,
    dismiss_low_confidence,
    elect_leader,
    middleware_step,
    route_gossip,
)
from .model import (
    AdaptationCase,
    AdaptationSession,
    CeldsError,
    Config,
    ContractViolation,
    ControllerAgent,
    ControllerState,
    Diagnosis,
    FeatureKind,
    FeatureSpec,
    Heartbeat,
    HeartbeatStatus,
    LeaderAgent,
    LeaderState,
    MonitorAgent,
    MonitorState,
    NodeMetrics,
    Notification,
    NotificationKind,
    OutcomeRecord,
    ProblemDescriptor,
    SessionStatus,
    Violation,
    WorkflowSchema,
    ActionSpec,
    validate_world,
)
from .monitor import (
    REPOSITORY_UNAVAILABLE,
    assign_diagnosis,
    evaluate_heartbeat,
    retrieve_history,
    step_monitor,
)
from .scenario import (
    CheckResult,
    Scenario,
    ScenarioError,
    ScenarioReport,
    ScenarioSyntaxError,
    execute_scenario,
    parse_scenario,
)

__version__ = "0.1.0"
