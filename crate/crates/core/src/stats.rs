//! Empirical tool distributions, Jensen-Shannon divergence (base 2), and the
//! plug-in mutual-information estimator used by the enforcement MI check.

use serde::{Deserialize, Serialize};

use crate::error::{ImlError, Result};
use crate::model::{AlphabetConfig, TraceEvent};

const SUM_TOLERANCE: f64 = 1e-9;

/// Probability vector aligned with an alphabet's tool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ToolDistribution {
    probs: Vec<f64>,
}

impl ToolDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(ImlError::InvalidDistribution("empty support".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(ImlError::InvalidDistribution(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(ImlError::InvalidDistribution(format!(
                "probabilities sum to {sum}"
            )));
        }
        Ok(ToolDistribution { probs })
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(ImlError::NoObservations);
        }
        Ok(ToolDistribution {
            probs: counts.iter().map(|&c| c as f64 / total as f64).collect(),
        })
    }

    pub fn point_mass(len: usize, index: usize) -> Self {
        let mut probs = vec![0.0; len];
        probs[index] = 1.0;
        ToolDistribution { probs }
    }

    /// `(1 - s) * self + s * other`, with `s` clamped to `[0, 1]`.
    pub fn mix(&self, other: &ToolDistribution, s: f64) -> Result<Self> {
        check_same_len(self, other)?;
        let s = s.clamp(0.0, 1.0);
        if s == 0.0 {
            return Ok(self.clone());
        }
        if s == 1.0 {
            return Ok(other.clone());
        }
        Ok(ToolDistribution {
            probs: self
                .probs
                .iter()
                .zip(&other.probs)
                .map(|(a, b)| (1.0 - s) * a + s * b)
                .collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Expectation of `values` under this distribution.
    pub fn expectation(&self, values: &[f64]) -> f64 {
        self.probs.iter().zip(values).map(|(p, v)| p * v).sum()
    }
}

fn check_same_len(p: &ToolDistribution, q: &ToolDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(ImlError::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

pub fn empirical_distribution(
    events: &[TraceEvent],
    alphabet: &AlphabetConfig,
) -> Result<ToolDistribution> {
    if events.is_empty() {
        return Err(ImlError::NoObservations);
    }
    let mut counts = vec![0u64; alphabet.len()];
    for e in events {
        counts[alphabet.require_index(e.tool.as_str())?] += 1;
    }
    ToolDistribution::from_counts(&counts)
}

fn kl_to_mixture(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (2.0 * a / (a + b)).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits on raw aligned probability slices.
pub fn js_bits(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let js = 0.5 * kl_to_mixture(p, q) + 0.5 * kl_to_mixture(q, p);
    js.clamp(0.0, 1.0)
}

/// Jensen-Shannon divergence in bits on raw counts (no normalisation by the caller).
pub(crate) fn js_bits_counts(p: &[u64], q: &[u64]) -> f64 {
    let np: u64 = p.iter().sum();
    let nq: u64 = q.iter().sum();
    if np == 0 || nq == 0 {
        return 0.0;
    }
    let pp: Vec<f64> = p.iter().map(|&c| c as f64 / np as f64).collect();
    let qq: Vec<f64> = q.iter().map(|&c| c as f64 / nq as f64).collect();
    js_bits(&pp, &qq)
}

pub fn js_divergence(p: &ToolDistribution, q: &ToolDistribution) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(js_bits(&p.probs, &q.probs))
}

fn entropy_bits(probs: impl IntoIterator<Item = f64>) -> f64 {
    probs
        .into_iter()
        .filter(|p| *p > 0.0)
        .map(|p| -p * p.log2())
        .sum()
}

/// Plug-in estimates `(I(label; signal), H(label))` in bits.
pub fn empirical_mutual_information(labels: &[bool], signals: &[bool]) -> Result<(f64, f64)> {
    if labels.len() != signals.len() {
        return Err(ImlError::LengthMismatch {
            left: labels.len(),
            right: signals.len(),
        });
    }
    if labels.is_empty() {
        return Err(ImlError::NoObservations);
    }
    let n = labels.len() as f64;
    let mut joint = [[0u64; 2]; 2];
    for (&l, &s) in labels.iter().zip(signals) {
        joint[usize::from(l)][usize::from(s)] += 1;
    }
    let label_marg = [
        (joint[0][0] + joint[0][1]) as f64 / n,
        (joint[1][0] + joint[1][1]) as f64 / n,
    ];
    let signal_marg = [
        (joint[0][0] + joint[1][0]) as f64 / n,
        (joint[0][1] + joint[1][1]) as f64 / n,
    ];
    let h_label = entropy_bits(label_marg);
    let h_signal = entropy_bits(signal_marg);
    let h_joint = entropy_bits(joint.iter().flatten().map(|&c| c as f64 / n));
    let mi = (h_label + h_signal - h_joint).max(0.0);
    Ok((mi.min(h_label), h_label))
}
