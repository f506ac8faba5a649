//! Behavioral drift monitoring against a frozen admission snapshot.
//!
//! An agent's burn-in trace is summarised once ([`engine::AdmissionSnapshot`])
//! and every later action is scored for deviation from it
//! ([`engine::Monitor`]). A point-wise enforcement signal
//! ([`enforcement::check_event`]) and a reference-free anomaly baseline
//! ([`baseline::BaselineState`]) run alongside for comparison, and
//! [`harness`] reproduces the seeded drift experiments end to end.

pub mod baseline;
pub mod enforcement;
pub mod engine;
pub mod error;
pub mod harness;
pub mod model;
pub mod report;
pub mod scenario;
pub mod stats;

pub use baseline::BaselineState;
pub use enforcement::{check_event, check_trace, EnforcementDecision, Violation, ViolationKind};
pub use engine::{build_snapshot, detection_time, AdmissionSnapshot, DeviationReport, Monitor};
pub use error::{ImlError, Result};
pub use harness::{
    check_bound, extract_witness, mi_experiment, multi_seed_study, run_scenario, score_events,
    BoundCheck, RunRecord, RunResult, RunSummary, WitnessReport,
};
pub use model::{load_config, AlphabetConfig, ImlConfig, MonitorConfig, ToolId, TraceEvent};
pub use scenario::{mock_agent_schedule, service_schedule, Prng, ScenarioKind, ScenarioSpec};
pub use stats::{
    empirical_distribution, empirical_mutual_information, js_divergence, ToolDistribution,
};
