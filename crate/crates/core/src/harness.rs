//! End-to-end experiment runner: scenario runs, witness extraction,
//! detection-delay bound checks, the enforcement MI experiment, and
//! multi-seed studies.

use std::thread;

use serde::{Deserialize, Serialize};

use crate::baseline::BaselineState;
use crate::enforcement::check_trace;
use crate::engine::{detection_time, AdmissionSnapshot, Monitor, SmoothedScore};
use crate::error::{ImlError, Result};
use crate::model::{MonitorConfig, ToolId, TraceEvent};
use crate::scenario::{category_split, generate, sample_index, Prng, ScenarioSpec};
use crate::stats::{
    empirical_distribution, empirical_mutual_information, js_divergence, ToolDistribution,
};

pub const DEFAULT_THETAS: [f64; 2] = [0.20, 0.30];
pub const DEFAULT_EPS_EST: f64 = 0.02;
pub const WITNESS_SEGMENT: usize = 50;
pub const MIN_WITNESS_STEPS: usize = 300;

/// One scored step. Field order is the CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub tool: ToolId,
    pub depth: u32,
    pub enforcement: bool,
    pub d_t: f64,
    pub d_c: f64,
    pub d_l: f64,
    pub d_raw: f64,
    pub d_ema: f64,
    pub baseline: f64,
}

impl SmoothedScore for RunRecord {
    fn step(&self) -> u64 {
        self.step
    }
    fn smoothed(&self) -> f64 {
        self.d_ema
    }
}

impl RunRecord {
    pub fn event(&self) -> TraceEvent {
        TraceEvent {
            step: self.step,
            tool: self.tool.clone(),
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub theta: f64,
    pub step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub enforcement_count: usize,
    pub d_final: f64,
    pub detections: Vec<Detection>,
    pub baseline_peak: f64,
    pub baseline_peak_step: u64,
    pub baseline_final: f64,
}

impl RunSummary {
    pub fn from_records(records: &[RunRecord], thetas: &[f64]) -> Result<Self> {
        let last = records.last().ok_or(ImlError::NoObservations)?;
        let (peak_step, peak) =
            records
                .iter()
                .fold((records[0].step, f64::NEG_INFINITY), |acc, r| {
                    if r.baseline > acc.1 {
                        (r.step, r.baseline)
                    } else {
                        acc
                    }
                });
        Ok(RunSummary {
            enforcement_count: records.iter().filter(|r| r.enforcement).count(),
            d_final: last.d_ema,
            detections: thetas
                .iter()
                .map(|&theta| Detection {
                    theta,
                    step: detection_time(records, theta),
                })
                .collect(),
            baseline_peak: peak,
            baseline_peak_step: peak_step,
            baseline_final: last.baseline,
        })
    }

    pub fn detection(&self, theta: f64) -> Option<u64> {
        self.detections
            .iter()
            .find(|d| (d.theta - theta).abs() < 1e-12)
            .and_then(|d| d.step)
    }

    pub fn baseline_decay(&self) -> f64 {
        self.baseline_peak - self.baseline_final
    }

    pub fn lead_over_baseline(&self) -> f64 {
        self.d_final - self.baseline_final
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    /// Absent for replays of externally captured traces.
    pub spec: Option<ScenarioSpec>,
    pub snapshot: AdmissionSnapshot,
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

impl RunResult {
    pub fn name(&self) -> String {
        match &self.spec {
            Some(spec) => format!(
                "{}_{}_seed{}",
                spec.kind.name(),
                spec.total_steps,
                spec.seed
            ),
            None => "replay".to_string(),
        }
    }

    pub fn d_ema_series(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.d_ema).collect()
    }
}

/// Score a complete event stream: the first `burnin` events build the
/// snapshot, then every event (burn-in included) goes through the monitor,
/// the enforcement check, and the baseline.
pub fn score_events(
    events: &[TraceEvent],
    burnin: usize,
    cfg: &MonitorConfig,
    spec: Option<ScenarioSpec>,
) -> Result<RunResult> {
    if events.is_empty() {
        return Err(ImlError::NoObservations);
    }
    let burnin = &events[..burnin.min(events.len())];
    let mut monitor = Monitor::admit(burnin, cfg)?;
    let snapshot = monitor.snapshot().clone();
    let mut baseline = BaselineState::with_default_window(cfg.alphabet.len());
    let mut records = Vec::with_capacity(events.len());
    for event in events {
        let report = monitor.observe(event, cfg)?;
        let b = baseline.observe(event, &cfg.alphabet)?;
        records.push(RunRecord {
            step: event.step,
            tool: event.tool.clone(),
            depth: event.depth,
            enforcement: report.enforcement_violated,
            d_t: report.d_t,
            d_c: report.d_c,
            d_l: report.d_l,
            d_raw: report.d_raw,
            d_ema: report.d_ema,
            baseline: b,
        });
    }
    let summary = RunSummary::from_records(&records, &DEFAULT_THETAS)?;
    Ok(RunResult {
        spec,
        snapshot,
        records,
        summary,
    })
}

pub fn run_scenario(spec: &ScenarioSpec, cfg: &MonitorConfig) -> Result<RunResult> {
    let events = generate(spec, &cfg.alphabet)?;
    score_events(&events, spec.burnin, cfg, Some(spec.clone()))
}

/// Run several independent specs on scoped threads; output order matches input.
pub fn run_many(specs: &[ScenarioSpec], cfg: &MonitorConfig) -> Result<Vec<RunResult>> {
    thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .map(|spec| scope.spawn(move || run_scenario(spec, cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReport {
    pub first_step: u64,
    pub last_step: u64,
    pub distribution: ToolDistribution,
    pub g: u8,
    pub d_t: f64,
    pub d_c: f64,
    pub d_l: f64,
    /// Smoothed score reported at the segment's last event.
    pub d_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub admission: SegmentReport,
    pub drifted: SegmentReport,
    pub separation: f64,
}

fn segment_report(
    records: &[RunRecord],
    snapshot: &AdmissionSnapshot,
    cfg: &MonitorConfig,
) -> Result<SegmentReport> {
    let events: Vec<TraceEvent> = records.iter().map(RunRecord::event).collect();
    let decision = check_trace(&events, &cfg.alphabet);
    if decision.violated {
        let at = decision.reasons[0].step;
        return Err(ImlError::WitnessInvalid(format!(
            "segment {}..={} is not enforcement-compliant (violation at step {at})",
            records[0].step,
            records[records.len() - 1].step
        )));
    }
    let distribution = empirical_distribution(&events, &cfg.alphabet)?;
    let n = events.len() as f64;
    let mean_depth = events.iter().map(|e| f64::from(e.depth)).sum::<f64>() / n;
    let last = records.last().expect("non-empty segment");
    Ok(SegmentReport {
        first_step: records[0].step,
        last_step: last.step,
        d_t: js_divergence(&distribution, &snapshot.p_e0)?,
        d_c: distribution.expectation(&cfg.alphabet.risk_vector()),
        d_l: ((mean_depth - snapshot.mu_depth).abs() / (2.0 * snapshot.sigma_depth)).min(1.0),
        distribution,
        g: decision.signal(),
        d_hat: last.d_ema,
    })
}

/// The admission segment (first 50 steps) against the last 50 steps: both
/// must be enforcement-compliant, yet their scores differ.
pub fn extract_witness(result: &RunResult, cfg: &MonitorConfig) -> Result<WitnessReport> {
    let n = result.records.len();
    if n < MIN_WITNESS_STEPS {
        return Err(ImlError::TraceTooShort {
            required: MIN_WITNESS_STEPS,
            got: n,
        });
    }
    let admission = segment_report(&result.records[..WITNESS_SEGMENT], &result.snapshot, cfg)?;
    let drifted = segment_report(
        &result.records[n - WITNESS_SEGMENT..],
        &result.snapshot,
        cfg,
    )?;
    Ok(WitnessReport {
        separation: (drifted.d_hat - admission.d_hat).abs(),
        admission,
        drifted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub alpha_hat: f64,
    pub t0: u64,
    pub theta: f64,
    pub eps_est: f64,
    pub bound: f64,
    pub observed: u64,
    pub satisfied: bool,
}

impl BoundCheck {
    pub fn margin(&self) -> f64 {
        self.bound - self.observed as f64
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Some(sxy / sxx)
}

/// Delay-bound check on a raw `(step, smoothed score)` series.
pub fn bound_from_series(
    series: &[(u64, f64)],
    t0: u64,
    theta: f64,
    eps_est: f64,
) -> Result<BoundCheck> {
    let observed = series
        .iter()
        .find(|(_, d)| *d >= theta)
        .map(|(s, _)| *s)
        .ok_or(ImlError::NoDetection(theta))?;
    let fit: Vec<(f64, f64)> = series
        .iter()
        .filter(|(s, _)| *s >= t0 && *s <= observed)
        .map(|(s, d)| (*s as f64, *d))
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = fit.into_iter().unzip();
    let alpha_hat = ols_slope(&xs, &ys).ok_or_else(|| {
        ImlError::InvalidArgument(format!(
            "slope undefined: detection at step {observed} leaves too few points after onset {t0}"
        ))
    })?;
    let bound = t0 as f64 + (theta + eps_est) / alpha_hat;
    Ok(BoundCheck {
        alpha_hat,
        t0,
        theta,
        eps_est,
        bound,
        observed,
        satisfied: alpha_hat > 0.0 && observed as f64 <= bound,
    })
}

pub fn check_bound(result: &RunResult, theta: f64, eps_est: f64) -> Result<BoundCheck> {
    let t0 = result
        .spec
        .as_ref()
        .map(|s| s.onset)
        .ok_or_else(|| ImlError::InvalidArgument("bound check needs a drift onset".into()))?;
    let series: Vec<(u64, f64)> = result.records.iter().map(|r| (r.step, r.d_ema)).collect();
    bound_from_series(&series, t0, theta, eps_est)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MiOutcome {
    pub mi_bits: f64,
    pub entropy_bits: f64,
}

impl MiOutcome {
    pub fn signal_is_uninformative(&self) -> bool {
        self.mi_bits < self.entropy_bits
    }
}

/// Label-1 traces are drawn from the admission distribution, label-0 traces
/// from the drifted (but compliant) tool-drift target. With `poison_drifted`
/// every drifted trace runs at depth 11 and so trips the depth limit.
pub fn mi_experiment(
    n_traces: usize,
    trace_len: usize,
    seed: u64,
    poison_drifted: bool,
    cfg: &MonitorConfig,
) -> Result<MiOutcome> {
    mi_ensemble(
        n_traces,
        trace_len,
        seed,
        &category_split(0.75, 0.20, 0.05),
        &category_split(0.15, 0.75, 0.10),
        poison_drifted,
        cfg,
    )
}

pub fn mi_ensemble(
    n_traces: usize,
    trace_len: usize,
    seed: u64,
    in_contract: &ToolDistribution,
    drifted: &ToolDistribution,
    poison_drifted: bool,
    cfg: &MonitorConfig,
) -> Result<MiOutcome> {
    if n_traces < 100 || !n_traces.is_multiple_of(2) {
        return Err(ImlError::InvalidArgument(
            "n_traces must be even and at least 100".into(),
        ));
    }
    if trace_len == 0 {
        return Err(ImlError::InvalidArgument(
            "trace_len must be positive".into(),
        ));
    }
    let mut rng = Prng::new(seed);
    let mut labels = Vec::with_capacity(n_traces);
    let mut signals = Vec::with_capacity(n_traces);
    for i in 0..n_traces {
        let in_a0 = i < n_traces / 2;
        let (dist, depth) = if in_a0 {
            (in_contract, 1)
        } else {
            (drifted, if poison_drifted { 11 } else { 1 })
        };
        let trace: Vec<TraceEvent> = (0..trace_len)
            .map(|s| {
                let idx = sample_index(dist.probs(), rng.next_f64());
                TraceEvent::new(s as u64, cfg.alphabet.tools[idx].clone(), depth)
            })
            .collect();
        labels.push(in_a0);
        signals.push(check_trace(&trace, &cfg.alphabet).violated);
    }
    let (mi_bits, entropy_bits) = empirical_mutual_information(&labels, &signals)?;
    Ok(MiOutcome {
        mi_bits,
        entropy_bits,
    })
}

/// Mean and sample standard deviation (n - 1).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub d_final: f64,
    pub detection: Option<u64>,
    pub enforcement_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSeedTable {
    pub theta: f64,
    pub rows: Vec<SeedRow>,
    pub d_final_mean: f64,
    pub d_final_std: f64,
    /// Over the seeds that detected; `None` when none did.
    pub detection_mean_std: Option<(f64, f64)>,
}

impl MultiSeedTable {
    pub fn enforcement_total(&self) -> usize {
        self.rows.iter().map(|r| r.enforcement_count).sum()
    }
}

pub fn multi_seed_study(
    base: &ScenarioSpec,
    seeds: &[u64],
    theta: f64,
    cfg: &MonitorConfig,
) -> Result<MultiSeedTable> {
    if seeds.len() < 2 {
        return Err(ImlError::InvalidArgument("need at least 2 seeds".into()));
    }
    let specs: Vec<ScenarioSpec> = seeds.iter().map(|&s| base.clone().with_seed(s)).collect();
    let results = run_many(&specs, cfg)?;
    let rows: Vec<SeedRow> = results
        .iter()
        .map(|r| SeedRow {
            seed: r.spec.as_ref().map(|s| s.seed).unwrap_or_default(),
            d_final: r.summary.d_final,
            detection: detection_time(&r.records, theta),
            enforcement_count: r.summary.enforcement_count,
        })
        .collect();
    let finals: Vec<f64> = rows.iter().map(|r| r.d_final).collect();
    let (d_final_mean, d_final_std) = mean_std(&finals).expect("at least two rows");
    let detections: Vec<f64> = rows
        .iter()
        .filter_map(|r| r.detection.map(|d| d as f64))
        .collect();
    Ok(MultiSeedTable {
        theta,
        rows,
        d_final_mean,
        d_final_std,
        detection_mean_std: mean_std(&detections),
    })
}

/// Pool-adjacent-violators fit of a non-decreasing sequence.
pub fn isotonic_fit(values: &[f64]) -> Vec<f64> {
    // blocks of (mean, weight)
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() >= 2 {
            let (m2, w2) = blocks[blocks.len() - 1];
            let (m1, w1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.truncate(blocks.len() - 2);
            let w = w1 + w2;
            blocks.push(((m1 * w1 as f64 + m2 * w2 as f64) / w as f64, w));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, w)| std::iter::repeat_n(m, w))
        .collect()
}

/// Root-mean-square distance between `values` and their isotonic fit, as a
/// fraction of the series range. Zero for a non-decreasing series.
pub fn monotonicity_residual(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let fit = isotonic_fit(values);
    let rms = (values
        .iter()
        .zip(&fit)
        .map(|(v, f)| (v - f).powi(2))
        .sum::<f64>()
        / values.len() as f64)
        .sqrt();
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if hi > lo {
        rms / (hi - lo)
    } else {
        0.0
    }
}
