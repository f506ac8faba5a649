//! Point-wise enforcement signal.
//!
//! Every decision is a pure function of one event and the static rule set in
//! [`AlphabetConfig`]. Nothing here can see a snapshot or a history, which is
//! exactly why the signal stays silent under compliant drift.

use serde::{Deserialize, Serialize};

use crate::model::{AlphabetConfig, ToolId, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    ForbiddenTool,
    DepthExceeded,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub step: u64,
    pub kind: ViolationKind,
    pub tool: ToolId,
    pub depth: u32,
}

/// `violated` is the binary signal; `reasons` lists every point-wise violation.
/// Escalations are not modelled separately, they count as violations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforcementDecision {
    pub violated: bool,
    pub reasons: Vec<Violation>,
}

impl EnforcementDecision {
    fn from_reasons(reasons: Vec<Violation>) -> Self {
        EnforcementDecision {
            violated: !reasons.is_empty(),
            reasons,
        }
    }

    /// Signal as 0/1.
    pub fn signal(&self) -> u8 {
        u8::from(self.violated)
    }
}

fn event_violations(event: &TraceEvent, cfg: &AlphabetConfig) -> impl Iterator<Item = Violation> {
    let forbidden = cfg.forbidden.contains(event.tool.as_str());
    let too_deep = event.depth > cfg.max_depth;
    let make = move |kind| Violation {
        step: event.step,
        kind,
        tool: event.tool.clone(),
        depth: event.depth,
    };
    forbidden
        .then(|| make(ViolationKind::ForbiddenTool))
        .into_iter()
        .chain(too_deep.then(|| make(ViolationKind::DepthExceeded)))
}

pub fn check_event(event: &TraceEvent, cfg: &AlphabetConfig) -> EnforcementDecision {
    EnforcementDecision::from_reasons(event_violations(event, cfg).collect())
}

/// Existential aggregation over the per-event checks.
pub fn check_trace<'a, I>(trace: I, cfg: &AlphabetConfig) -> EnforcementDecision
where
    I: IntoIterator<Item = &'a TraceEvent>,
{
    EnforcementDecision::from_reasons(
        trace
            .into_iter()
            .flat_map(|e| event_violations(e, cfg))
            .collect(),
    )
}
