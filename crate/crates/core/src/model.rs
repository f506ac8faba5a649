//! Shared domain vocabulary: tools, trace events, the risk model, and the
//! configuration documents that parameterise enforcement and scoring.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ImlError, Result};

/// Name of an agent action drawn from a finite alphabet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolId(String);

impl ToolId {
    pub fn new(name: impl Into<String>) -> Result<Self> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(ImlError::Config("tool name must be non-empty".into()));
        }
        Ok(ToolId(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for ToolId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ToolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&self.0)
    }
}

impl From<&str> for ToolId {
    /// Unchecked conversion for literals; use [`ToolId::new`] for untrusted input.
    fn from(name: &str) -> Self {
        ToolId(name.to_string())
    }
}

/// One agent action: which tool was called and at what delegation depth.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: u64,
    pub tool: ToolId,
    pub depth: u32,
}

impl TraceEvent {
    pub fn new(step: u64, tool: impl Into<ToolId>, depth: u32) -> Self {
        TraceEvent {
            step,
            tool: tool.into(),
            depth,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(ImlError::InvalidEvent(format!(
                "depth must be >= 1 at step {}",
                self.step
            )));
        }
        if self.tool.as_str().trim().is_empty() {
            return Err(ImlError::InvalidEvent(format!(
                "empty tool name at step {}",
                self.step
            )));
        }
        Ok(())
    }
}

/// Pre-specified per-tool risk score in `[0, 1]`.
pub type RiskModel = BTreeMap<ToolId, f64>;

/// The closed tool alphabet plus the static enforcement rule set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphabetConfig {
    pub tools: Vec<ToolId>,
    pub risk: RiskModel,
    /// Forbidden tools need not belong to `tools`.
    pub forbidden: BTreeSet<ToolId>,
    pub max_depth: u32,
}

pub const DEFAULT_TOOLS: [(&str, f64); 6] = [
    ("safe_read", 0.10),
    ("safe_query", 0.10),
    ("moderate_write", 0.50),
    ("moderate_send", 0.60),
    ("risky_execute", 0.85),
    ("risky_delegate", 0.90),
];

pub const DEFAULT_FORBIDDEN: [&str; 2] = ["forbidden_exec", "forbidden_delete"];

pub const DEFAULT_MAX_DEPTH: u32 = 10;

impl Default for AlphabetConfig {
    fn default() -> Self {
        AlphabetConfig {
            tools: DEFAULT_TOOLS
                .iter()
                .map(|(t, _)| ToolId::from(*t))
                .collect(),
            risk: DEFAULT_TOOLS
                .iter()
                .map(|(t, r)| (ToolId::from(*t), *r))
                .collect(),
            forbidden: DEFAULT_FORBIDDEN.iter().map(|t| ToolId::from(*t)).collect(),
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl AlphabetConfig {
    pub fn len(&self) -> usize {
        self.tools.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
    }

    pub fn index_of(&self, tool: &str) -> Option<usize> {
        self.tools.iter().position(|t| t.as_str() == tool)
    }

    pub fn require_index(&self, tool: &str) -> Result<usize> {
        self.index_of(tool)
            .ok_or_else(|| ImlError::UnknownTool(tool.to_string()))
    }

    /// Risk scores aligned with `tools`.
    pub fn risk_vector(&self) -> Vec<f64> {
        self.tools.iter().map(|t| self.risk[t.as_str()]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tools.is_empty() {
            return Err(ImlError::Config("alphabet has no tools".into()));
        }
        let mut seen = BTreeSet::new();
        for tool in &self.tools {
            if tool.as_str().trim().is_empty() {
                return Err(ImlError::Config("tool name must be non-empty".into()));
            }
            if !seen.insert(tool) {
                return Err(ImlError::Config(format!("duplicate tool `{tool}`")));
            }
            match self.risk.get(tool.as_str()) {
                None => return Err(ImlError::Config(format!("missing risk for `{tool}`"))),
                Some(&r) if !(0.0..=1.0).contains(&r) => {
                    return Err(ImlError::RiskOutOfRange {
                        tool: tool.to_string(),
                        value: r,
                    })
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.risk.keys().find(|t| !seen.contains(t)) {
            return Err(ImlError::Config(format!(
                "risk entry for `{extra}` which is not in the alphabet"
            )));
        }
        if self.max_depth < 1 {
            return Err(ImlError::Config("max_depth must be positive".into()));
        }
        Ok(())
    }
}

/// Alert band: `level` applies when the smoothed score is at least `lower`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlertThreshold {
    pub level: String,
    pub lower: f64,
}

impl AlertThreshold {
    fn new(level: &str, lower: f64) -> Self {
        AlertThreshold {
            level: level.to_string(),
            lower,
        }
    }
}

/// Averaging horizon for the constraint-proximity component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskScope {
    /// Every event observed since admission.
    Cumulative,
    /// The same sliding window as the other components.
    Window,
}

/// Scoring parameters for the deviation estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImlConfig {
    pub w_t: f64,
    pub w_c: f64,
    pub w_l: f64,
    pub ema_alpha: f64,
    /// Sliding window length (events) for all three components.
    pub dist_window: usize,
    /// Lower bound applied to the admission depth standard deviation.
    pub sigma_floor: f64,
    /// Horizon over which the mean risk is averaged.
    pub risk_scope: RiskScope,
    /// Ascending alert bands; the first must start at 0.
    pub thresholds: Vec<AlertThreshold>,
}

impl Default for ImlConfig {
    fn default() -> Self {
        ImlConfig {
            w_t: 0.40,
            w_c: 0.35,
            w_l: 0.25,
            ema_alpha: 0.15,
            dist_window: 50,
            sigma_floor: 0.5,
            risk_scope: RiskScope::Window,
            thresholds: vec![
                AlertThreshold::new("normal", 0.0),
                AlertThreshold::new("elevated", 0.20),
                AlertThreshold::new("medium", 0.30),
                AlertThreshold::new("high", 0.45),
            ],
        }
    }
}

impl ImlConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [self.w_t, self.w_c, self.w_l];
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ImlError::Config("weights must be non-negative".into()));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(ImlError::WeightSum(sum));
        }
        if !(self.ema_alpha > 0.0 && self.ema_alpha <= 1.0) {
            return Err(ImlError::Config(format!(
                "ema_alpha must lie in (0, 1], got {}",
                self.ema_alpha
            )));
        }
        if self.dist_window == 0 {
            return Err(ImlError::Config("dist_window must be positive".into()));
        }
        if !(self.sigma_floor.is_finite() && self.sigma_floor > 0.0) {
            return Err(ImlError::Config("sigma_floor must be positive".into()));
        }
        let Some(first) = self.thresholds.first() else {
            return Err(ImlError::Config(
                "at least one alert level is required".into(),
            ));
        };
        if first.lower != 0.0 {
            return Err(ImlError::Config(
                "the lowest alert level must start at 0".into(),
            ));
        }
        for pair in self.thresholds.windows(2) {
            if pair[1].lower.partial_cmp(&pair[0].lower) != Some(std::cmp::Ordering::Greater) {
                return Err(ImlError::Config(
                    "alert thresholds must be ascending".into(),
                ));
            }
        }
        Ok(())
    }

    /// Highest alert level whose lower bound does not exceed `score`.
    pub fn alert_level(&self, score: f64) -> &str {
        self.thresholds
            .iter()
            .rev()
            .find(|t| t.lower <= score)
            .or(self.thresholds.first())
            .map(|t| t.level.as_str())
            .unwrap_or("normal")
    }
}

/// The full configuration document: alphabet and scoring parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorConfig {
    pub alphabet: AlphabetConfig,
    pub iml: ImlConfig,
}

impl MonitorConfig {
    pub fn validate(&self) -> Result<()> {
        self.alphabet.validate()?;
        self.iml.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parse and validate a JSON configuration document. Absent sections and
/// fields take their defaults; an empty document yields the default config.
pub fn load_config(source: &str) -> Result<MonitorConfig> {
    let config: MonitorConfig = if source.trim().is_empty() {
        MonitorConfig::default()
    } else {
        serde_json::from_str(source).map_err(|e| ImlError::Config(e.to_string()))?
    };
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_table_defaults() {
        let cfg = load_config("").unwrap();
        assert_eq!(cfg, load_config("{}").unwrap());
        let a = &cfg.alphabet;
        let names: Vec<&str> = a.tools.iter().map(|t| t.as_str()).collect();
        assert_eq!(
            names,
            [
                "safe_read",
                "safe_query",
                "moderate_write",
                "moderate_send",
                "risky_execute",
                "risky_delegate"
            ]
        );
        assert_eq!(a.risk_vector(), vec![0.10, 0.10, 0.50, 0.60, 0.85, 0.90]);
        assert!(a.forbidden.contains("forbidden_exec"));
        assert!(a.forbidden.contains("forbidden_delete"));
        assert_eq!(a.forbidden.len(), 2);
        assert_eq!(a.max_depth, 10);

        let iml = &cfg.iml;
        assert_eq!((iml.w_t, iml.w_c, iml.w_l), (0.40, 0.35, 0.25));
        assert_eq!(iml.ema_alpha, 0.15);
        assert_eq!(iml.dist_window, 50);
        assert_eq!(iml.sigma_floor, 0.5);
    }

    #[test]
    fn degenerate_weights_are_accepted() {
        let cfg = load_config(r#"{"iml": {"w_t": 1, "w_c": 0, "w_l": 0}}"#).unwrap();
        assert_eq!(cfg.iml.w_t, 1.0);
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = load_config(r#"{"iml": {"w_t": 0.5, "w_c": 0.35, "w_l": 0.25}}"#).unwrap_err();
        assert!(matches!(err, ImlError::WeightSum(_)));
    }

    #[test]
    fn risk_out_of_range_is_rejected() {
        let doc = r#"{"alphabet": {"tools": ["a", "b"], "risk": {"a": 1.2, "b": 0.1}}}"#;
        let err = load_config(doc).unwrap_err();
        assert!(err.to_string().contains("risk out of range"), "{err}");
    }

    #[test]
    fn malformed_documents_are_rejected() {
        assert!(matches!(load_config("{"), Err(ImlError::Config(_))));
        assert!(matches!(
            load_config(r#"{"iml": {"bogus": 1}}"#),
            Err(ImlError::Config(_))
        ));
        let missing_risk = r#"{"alphabet": {"tools": ["a"], "risk": {}}}"#;
        assert!(load_config(missing_risk).is_err());
        let stray_risk = r#"{"alphabet": {"tools": ["a"], "risk": {"a": 0.1, "z": 0.2}}}"#;
        assert!(load_config(stray_risk).is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = load_config(r#"{"iml": {"dist_window": 20, "ema_alpha": 0.3}}"#).unwrap();
        let again = load_config(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn alert_bands() {
        let iml = ImlConfig::default();
        assert_eq!(iml.alert_level(0.0), "normal");
        assert_eq!(iml.alert_level(0.199), "normal");
        assert_eq!(iml.alert_level(0.20), "elevated");
        assert_eq!(iml.alert_level(0.30), "medium");
        assert_eq!(iml.alert_level(0.449), "medium");
        assert_eq!(iml.alert_level(0.9), "high");
    }

    #[test]
    fn event_validation() {
        assert!(TraceEvent::new(0, "safe_read", 0).validate().is_err());
        assert!(TraceEvent::new(0, "safe_read", 1).validate().is_ok());
        assert!(ToolId::new("  ").is_err());
    }
}
