//! The deviation estimator.
//!
//! A burn-in trace is summarised into an [`AdmissionSnapshot`] which is frozen
//! for the rest of the session. Each subsequent event is scored against that
//! snapshot over a sliding window:
//!
//! * `d_t`: JS divergence between the window's tool distribution and the snapshot's,
//! * `d_c`: mean tool risk over the window (or since admission, per [`RiskScope`]),
//! * `d_l`: `min(|mean window depth - mu| / (2 sigma), 1)`,
//!
//! combined with fixed weights and smoothed by an exponential moving average.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::enforcement::check_event;
use crate::error::{ImlError, Result};
use crate::model::{AlphabetConfig, ImlConfig, MonitorConfig, RiskScope, TraceEvent};
use crate::stats::{empirical_distribution, js_bits, ToolDistribution};

pub const MIN_BURNIN: usize = 2;

/// Frozen admission-time behaviour summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmissionSnapshot {
    pub p_e0: ToolDistribution,
    pub mu_depth: f64,
    /// Population standard deviation of burn-in depths, floored at `sigma_floor`.
    pub sigma_depth: f64,
    pub burnin_count: usize,
    /// Step of the last burn-in event.
    pub frozen_at: u64,
}

pub fn build_snapshot(
    burnin: &[TraceEvent],
    cfg: &ImlConfig,
    alphabet: &AlphabetConfig,
) -> Result<AdmissionSnapshot> {
    if burnin.len() < MIN_BURNIN {
        return Err(ImlError::BurnInTooShort {
            required: MIN_BURNIN,
            got: burnin.len(),
        });
    }
    for event in burnin {
        event.validate()?;
        if check_event(event, alphabet).violated {
            return Err(ImlError::NonCompliantBurnIn { step: event.step });
        }
    }
    let p_e0 = empirical_distribution(burnin, alphabet)?;
    let n = burnin.len() as f64;
    let mu = burnin.iter().map(|e| f64::from(e.depth)).sum::<f64>() / n;
    let var = burnin
        .iter()
        .map(|e| (f64::from(e.depth) - mu).powi(2))
        .sum::<f64>()
        / n;
    Ok(AdmissionSnapshot {
        p_e0,
        mu_depth: mu,
        sigma_depth: var.sqrt().max(cfg.sigma_floor),
        burnin_count: burnin.len(),
        frozen_at: burnin.last().map(|e| e.step).unwrap_or(0),
    })
}

/// Per-event estimator output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub step: u64,
    pub d_t: f64,
    pub d_c: f64,
    pub d_l: f64,
    pub d_raw: f64,
    pub d_ema: f64,
    pub alert: String,
    pub enforcement_violated: bool,
}

/// Anything carrying a step index and a smoothed score.
pub trait SmoothedScore {
    fn step(&self) -> u64;
    fn smoothed(&self) -> f64;
}

impl SmoothedScore for DeviationReport {
    fn step(&self) -> u64 {
        self.step
    }
    fn smoothed(&self) -> f64 {
        self.d_ema
    }
}

/// First step whose smoothed score reaches `theta` (inclusive).
pub fn detection_time<S: SmoothedScore>(series: &[S], theta: f64) -> Option<u64> {
    debug_assert!(theta > 0.0 && theta < 1.0, "theta must lie in (0, 1)");
    series
        .iter()
        .find(|r| r.smoothed() >= theta)
        .map(SmoothedScore::step)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct WindowEntry {
    tool: usize,
    depth: u32,
}

/// Online scoring state for one monitored agent.
///
/// Single-writer: callers must serialise `observe` calls on one monitor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monitor {
    snapshot: AdmissionSnapshot,
    window: VecDeque<WindowEntry>,
    window_counts: Vec<u64>,
    window_depth_sum: u64,
    total_counts: Vec<u64>,
    total_depth_sum: u64,
    total_count: u64,
    prev_ema: Option<f64>,
    last_step: Option<u64>,
}

/// Component scores before smoothing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub d_t: f64,
    pub d_c: f64,
    pub d_l: f64,
    pub d_raw: f64,
}

impl Monitor {
    pub fn new(snapshot: AdmissionSnapshot) -> Self {
        let k = snapshot.p_e0.len();
        Monitor {
            snapshot,
            window: VecDeque::new(),
            window_counts: vec![0; k],
            window_depth_sum: 0,
            total_counts: vec![0; k],
            total_depth_sum: 0,
            total_count: 0,
            prev_ema: None,
            last_step: None,
        }
    }

    /// Build the snapshot from `burnin` and start a fresh monitor.
    pub fn admit(burnin: &[TraceEvent], cfg: &MonitorConfig) -> Result<Self> {
        build_snapshot(burnin, &cfg.iml, &cfg.alphabet).map(Monitor::new)
    }

    pub fn snapshot(&self) -> &AdmissionSnapshot {
        &self.snapshot
    }

    pub fn observed(&self) -> u64 {
        self.total_count
    }

    pub fn last_step(&self) -> Option<u64> {
        self.last_step
    }

    pub fn current_ema(&self) -> f64 {
        self.prev_ema.unwrap_or(0.0)
    }

    /// Mean depth over every observed event, not only the window.
    pub fn cumulative_mean_depth(&self) -> Option<f64> {
        (self.total_count > 0).then(|| self.total_depth_sum as f64 / self.total_count as f64)
    }

    /// Drop all observations and the EMA history; the snapshot stays frozen.
    pub fn clear(&mut self) {
        *self = Monitor::new(self.snapshot.clone());
    }

    fn push(&mut self, tool: usize, depth: u32, window: usize) {
        self.window.push_back(WindowEntry { tool, depth });
        self.window_counts[tool] += 1;
        self.window_depth_sum += u64::from(depth);
        while self.window.len() > window {
            let old = self.window.pop_front().expect("non-empty window");
            self.window_counts[old.tool] -= 1;
            self.window_depth_sum -= u64::from(old.depth);
        }
        self.total_counts[tool] += 1;
        self.total_depth_sum += u64::from(depth);
        self.total_count += 1;
    }

    fn components(&self, cfg: &MonitorConfig) -> Components {
        let n = self.window.len() as f64;
        let window_dist: Vec<f64> = self.window_counts.iter().map(|&c| c as f64 / n).collect();
        let d_t = js_bits(&window_dist, self.snapshot.p_e0.probs());
        let (risk_counts, risk_n) = match cfg.iml.risk_scope {
            RiskScope::Window => (&self.window_counts, n),
            RiskScope::Cumulative => (&self.total_counts, self.total_count as f64),
        };
        let risk = cfg.alphabet.risk_vector();
        let d_c = (risk_counts
            .iter()
            .zip(&risk)
            .map(|(&c, r)| c as f64 * r)
            .sum::<f64>()
            / risk_n)
            .clamp(0.0, 1.0);
        let mean_depth = self.window_depth_sum as f64 / n;
        let d_l = ((mean_depth - self.snapshot.mu_depth).abs() / (2.0 * self.snapshot.sigma_depth))
            .min(1.0);
        let iml = &cfg.iml;
        let d_raw = iml.w_t * d_t + iml.w_c * d_c + iml.w_l * d_l;
        Components {
            d_t,
            d_c,
            d_l,
            d_raw,
        }
    }

    fn validate(&self, event: &TraceEvent, cfg: &MonitorConfig) -> Result<usize> {
        event.validate()?;
        if cfg.alphabet.len() != self.window_counts.len() {
            return Err(ImlError::Config(
                "alphabet does not match the admission snapshot".into(),
            ));
        }
        let tool = cfg.alphabet.require_index(event.tool.as_str())?;
        if let Some(last) = self.last_step {
            if event.step <= last {
                return Err(ImlError::InvalidEvent(format!(
                    "step {} does not follow step {last}",
                    event.step
                )));
            }
        }
        Ok(tool)
    }

    /// Score one event and advance the state. Returns the components and the
    /// smoothed score without consulting enforcement.
    pub fn score(&mut self, event: &TraceEvent, cfg: &MonitorConfig) -> Result<(Components, f64)> {
        let tool = self.validate(event, cfg)?;
        self.push(tool, event.depth, cfg.iml.dist_window);
        self.last_step = Some(event.step);
        let c = self.components(cfg);
        let alpha = cfg.iml.ema_alpha;
        let ema = alpha * c.d_raw + (1.0 - alpha) * self.prev_ema.unwrap_or(0.0);
        self.prev_ema = Some(ema);
        Ok((c, ema))
    }

    pub fn observe(&mut self, event: &TraceEvent, cfg: &MonitorConfig) -> Result<DeviationReport> {
        let (c, d_ema) = self.score(event, cfg)?;
        Ok(DeviationReport {
            step: event.step,
            d_t: c.d_t,
            d_c: c.d_c,
            d_l: c.d_l,
            d_raw: c.d_raw,
            d_ema,
            alert: cfg.iml.alert_level(d_ema).to_string(),
            enforcement_violated: check_event(event, &cfg.alphabet).violated,
        })
    }
}
