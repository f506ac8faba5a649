//! Reference-free anomaly baseline.
//!
//! Compares the most recent `window` tools against the agent's own history
//! (every event that has left the window). Because the history keeps
//! absorbing drifted behaviour its sensitivity decays over time, and since it
//! never reads depth it cannot see delegation drift.
//!
//! The score stays at 0 until both the window and the history hold `window`
//! events; a JS comparison against a handful of history events is noise.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{AlphabetConfig, TraceEvent};
use crate::stats::js_bits_counts;

pub const DEFAULT_BASELINE_WINDOW: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineState {
    window: usize,
    recent: VecDeque<usize>,
    recent_counts: Vec<u64>,
    history_counts: Vec<u64>,
    steps: u64,
}

impl BaselineState {
    pub fn new(alphabet_len: usize, window: usize) -> Self {
        assert!(window > 0, "baseline window must be positive");
        BaselineState {
            window,
            recent: VecDeque::with_capacity(window + 1),
            recent_counts: vec![0; alphabet_len],
            history_counts: vec![0; alphabet_len],
            steps: 0,
        }
    }

    pub fn with_default_window(alphabet_len: usize) -> Self {
        Self::new(alphabet_len, DEFAULT_BASELINE_WINDOW)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn history_len(&self) -> u64 {
        self.history_counts.iter().sum()
    }

    /// Score one event. Zero until the window is full and history is non-empty.
    pub fn observe(&mut self, event: &TraceEvent, alphabet: &AlphabetConfig) -> Result<f64> {
        let tool = alphabet.require_index(event.tool.as_str())?;
        self.recent.push_back(tool);
        self.recent_counts[tool] += 1;
        if self.recent.len() > self.window {
            let evicted = self.recent.pop_front().expect("non-empty window");
            self.recent_counts[evicted] -= 1;
            self.history_counts[evicted] += 1;
        }
        self.steps += 1;
        if self.recent.len() < self.window || self.history_len() < self.window as u64 {
            return Ok(0.0);
        }
        Ok(js_bits_counts(&self.recent_counts, &self.history_counts))
    }

    pub fn clear(&mut self) {
        *self = BaselineState::new(self.recent_counts.len(), self.window);
    }
}
