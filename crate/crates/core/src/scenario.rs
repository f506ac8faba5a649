//! Seeded drift generators.
//!
//! All randomness comes from [`Prng`], a SplitMix64 stream, so a given
//! `(spec, seed)` pair yields the same events on every platform. Each
//! generated event consumes exactly two draws: one for the tool, one for the
//! depth.

use serde::{Deserialize, Serialize};

use crate::enforcement::check_trace;
use crate::error::{ImlError, Result};
use crate::model::{AlphabetConfig, TraceEvent};
use crate::stats::ToolDistribution;

/// SplitMix64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prng {
    state: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)` from the top 53 bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Inverse-CDF categorical draw for `u` in `[0, 1)`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding slack: fall back to the last tool with positive mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Split category masses evenly over the default alphabet's tool pairs
/// (safe_read/safe_query, moderate_write/moderate_send, risky_execute/risky_delegate).
pub fn category_split(safe: f64, boundary: f64, risky: f64) -> ToolDistribution {
    ToolDistribution::new(vec![
        safe / 2.0,
        safe / 2.0,
        boundary / 2.0,
        boundary / 2.0,
        risky / 2.0,
        risky / 2.0,
    ])
    .expect("category masses sum to one")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    ToolDrift,
    DelegationDrift,
    ContextDrift,
    Custom,
}

impl ScenarioKind {
    pub const BUILT_IN: [ScenarioKind; 3] = [
        ScenarioKind::ToolDrift,
        ScenarioKind::DelegationDrift,
        ScenarioKind::ContextDrift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ToolDrift => "tool_drift",
            ScenarioKind::DelegationDrift => "delegation_drift",
            ScenarioKind::ContextDrift => "context_drift",
            ScenarioKind::Custom => "custom",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "tool_drift" => Some(ScenarioKind::ToolDrift),
            "delegation_drift" => Some(ScenarioKind::DelegationDrift),
            "context_drift" => Some(ScenarioKind::ContextDrift),
            "custom" => Some(ScenarioKind::Custom),
            _ => None,
        }
    }
}

pub const DEFAULT_ONSET: u64 = 50;
pub const DEFAULT_BURNIN: usize = 50;

/// A seeded drift experiment.
///
/// Steps `0..burnin` form the admission burn-in. From `onset` the sampling
/// distribution moves linearly from `base_dist` to `target_dist`, reaching
/// the target after `ramp_steps` steps (by default at the last step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub base_dist: ToolDistribution,
    pub target_dist: ToolDistribution,
    pub base_depth: f64,
    pub target_depth: f64,
    pub onset: u64,
    pub total_steps: u64,
    pub burnin: usize,
    pub seed: u64,
    /// `None` stretches the ramp to the horizon; `Some(0)` is a step change.
    #[serde(default)]
    pub ramp_steps: Option<u64>,
}

impl ScenarioSpec {
    pub fn built_in(kind: ScenarioKind, total_steps: u64, seed: u64) -> Self {
        let base = category_split(0.75, 0.20, 0.05);
        let (target, target_depth) = match kind {
            ScenarioKind::ToolDrift => (category_split(0.15, 0.75, 0.10), 1.0),
            ScenarioKind::DelegationDrift => (base.clone(), 5.0),
            ScenarioKind::ContextDrift => (category_split(0.20, 0.60, 0.20), 1.0),
            ScenarioKind::Custom => (base.clone(), 1.0),
        };
        ScenarioSpec {
            kind,
            base_dist: base,
            target_dist: target,
            base_depth: 1.0,
            target_depth,
            onset: DEFAULT_ONSET,
            total_steps,
            burnin: DEFAULT_BURNIN,
            seed,
            ramp_steps: None,
        }
    }

    pub fn tool_drift(total_steps: u64, seed: u64) -> Self {
        Self::built_in(ScenarioKind::ToolDrift, total_steps, seed)
    }

    pub fn delegation_drift(total_steps: u64, seed: u64) -> Self {
        Self::built_in(ScenarioKind::DelegationDrift, total_steps, seed)
    }

    pub fn context_drift(total_steps: u64, seed: u64) -> Self {
        Self::built_in(ScenarioKind::ContextDrift, total_steps, seed)
    }

    /// No drift at all: onset at the horizon.
    pub fn stationary(total_steps: u64, seed: u64) -> Self {
        let mut spec = Self::built_in(ScenarioKind::Custom, total_steps, seed);
        spec.onset = total_steps;
        spec
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self, alphabet: &AlphabetConfig) -> Result<()> {
        let k = alphabet.len();
        if self.base_dist.len() != k || self.target_dist.len() != k {
            return Err(ImlError::InvalidScenario(format!(
                "distributions must cover the {k}-tool alphabet"
            )));
        }
        if self.total_steps == 0 {
            return Err(ImlError::InvalidScenario(
                "total_steps must be positive".into(),
            ));
        }
        if self.burnin < crate::engine::MIN_BURNIN {
            return Err(ImlError::InvalidScenario(
                "burn-in needs at least 2 events".into(),
            ));
        }
        if self.burnin as u64 > self.onset || self.onset > self.total_steps {
            return Err(ImlError::InvalidScenario(
                "require burnin <= onset <= total_steps".into(),
            ));
        }
        for d in [self.base_depth, self.target_depth] {
            if !(d.is_finite() && d >= 1.0 && d <= f64::from(u32::MAX)) {
                return Err(ImlError::InvalidScenario(format!("invalid depth {d}")));
            }
        }
        Ok(())
    }

    /// Mixing fraction at step `t`.
    pub fn mix_fraction(&self, t: u64) -> f64 {
        if t < self.onset {
            return 0.0;
        }
        let ramp = self.ramp_steps.unwrap_or_else(|| {
            self.total_steps
                .saturating_sub(1)
                .saturating_sub(self.onset)
        });
        if ramp == 0 {
            return 1.0;
        }
        ((t - self.onset) as f64 / ramp as f64).min(1.0)
    }

    pub fn sampling_distribution(&self, t: u64) -> ToolDistribution {
        self.base_dist
            .mix(&self.target_dist, self.mix_fraction(t))
            .expect("validated distributions share a support")
    }

    pub fn expected_depth(&self, t: u64) -> f64 {
        let s = self.mix_fraction(t);
        (1.0 - s) * self.base_depth + s * self.target_depth
    }
}

fn realize_depth(expected: f64, u: f64) -> u32 {
    let whole = expected.floor();
    let frac = expected - whole;
    whole as u32 + u32::from(u < frac)
}

/// Draw the event at step `t`.
pub fn scenario_event(
    spec: &ScenarioSpec,
    t: u64,
    rng: &mut Prng,
    alphabet: &AlphabetConfig,
) -> Result<TraceEvent> {
    if t >= spec.total_steps {
        return Err(ImlError::StepOutOfRange {
            step: t,
            total: spec.total_steps,
        });
    }
    let u_tool = rng.next_f64();
    let u_depth = rng.next_f64();
    let dist = spec.sampling_distribution(t);
    let tool = alphabet.tools[sample_index(dist.probs(), u_tool)].clone();
    Ok(TraceEvent {
        step: t,
        tool,
        depth: realize_depth(spec.expected_depth(t), u_depth),
    })
}

/// Full event stream for a spec, seeded from `spec.seed`.
pub fn generate(spec: &ScenarioSpec, alphabet: &AlphabetConfig) -> Result<Vec<TraceEvent>> {
    spec.validate(alphabet)?;
    let mut rng = Prng::new(spec.seed);
    (0..spec.total_steps)
        .map(|t| scenario_event(spec, t, &mut rng, alphabet))
        .collect()
}

/// `traces` traces whose sampling distribution interpolates linearly from
/// `p_a` (first trace) to `p_b` (last trace). Depths are all 1.
pub fn hidden_drift_sequence(
    p_a: &ToolDistribution,
    p_b: &ToolDistribution,
    traces: usize,
    per_trace_len: usize,
    rng: &mut Prng,
    alphabet: &AlphabetConfig,
) -> Result<Vec<Vec<TraceEvent>>> {
    if traces < 2 {
        return Err(ImlError::InvalidArgument("need at least 2 traces".into()));
    }
    for dist in [p_a, p_b] {
        if dist.len() != alphabet.len() {
            return Err(ImlError::LengthMismatch {
                left: dist.len(),
                right: alphabet.len(),
            });
        }
        let forbidden_mass = alphabet
            .tools
            .iter()
            .zip(dist.probs())
            .any(|(t, p)| *p > 0.0 && alphabet.forbidden.contains(t.as_str()));
        if forbidden_mass {
            return Err(ImlError::InvalidArgument(
                "interpolation endpoints must not support forbidden tools".into(),
            ));
        }
    }
    let mut out = Vec::with_capacity(traces);
    for t in 0..traces {
        let s = t as f64 / (traces - 1) as f64;
        let dist = p_a.mix(p_b, s)?;
        let trace: Vec<TraceEvent> = (0..per_trace_len)
            .map(|i| {
                let idx = sample_index(dist.probs(), rng.next_f64());
                TraceEvent::new(i as u64, alphabet.tools[idx].clone(), 1)
            })
            .collect();
        debug_assert!(!check_trace(&trace, alphabet).violated);
        out.push(trace);
    }
    Ok(out)
}

/// Schedule for the service replication run: 50 baseline events then a
/// 200-event step shift towards boundary and risky tools with slightly
/// deeper delegation.
pub fn service_schedule() -> ScenarioSpec {
    ScenarioSpec {
        kind: ScenarioKind::Custom,
        base_dist: category_split(0.75, 0.20, 0.05),
        target_dist: category_split(0.05, 0.25, 0.70),
        base_depth: 1.0,
        target_depth: 1.75,
        onset: 50,
        total_steps: 250,
        burnin: 50,
        seed: 99,
        ramp_steps: Some(0),
    }
}

/// Schedule for the mock-agent runs: 50 burn-in events, then 200 steps of
/// gradual tool drift with depth rising from 1 to 3.
pub fn mock_agent_schedule(seed: u64) -> ScenarioSpec {
    let mut spec = ScenarioSpec::tool_drift(250, seed);
    spec.target_depth = 3.0;
    spec
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix64_golden_vectors() {
        let mut rng = Prng::new(1234567);
        let got: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        assert_eq!(
            got,
            [
                6457827717110365317,
                3203168211198807973,
                9817491932198370423,
                4593380528125082431,
                16408922859458223821
            ]
        );
        let mut rng = Prng::new(42);
        assert_eq!(rng.next_u64(), 13679457532755275413);
        assert_eq!(rng.next_u64(), 2949826092126892291);
    }

    #[test]
    fn uniform_range() {
        let mut rng = Prng::new(7);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn built_in_parameters() {
        let t = ScenarioSpec::tool_drift(300, 42);
        assert_eq!(t.base_dist.probs(), &[0.375, 0.375, 0.1, 0.1, 0.025, 0.025]);
        assert_eq!(
            t.target_dist.probs(),
            &[0.075, 0.075, 0.375, 0.375, 0.05, 0.05]
        );
        assert_eq!((t.base_depth, t.target_depth), (1.0, 1.0));
        let d = ScenarioSpec::delegation_drift(300, 42);
        assert_eq!(d.target_dist, d.base_dist);
        assert_eq!(d.target_depth, 5.0);
        let c = ScenarioSpec::context_drift(300, 42);
        assert_eq!(c.target_dist.probs(), &[0.1, 0.1, 0.3, 0.3, 0.1, 0.1]);
        assert_eq!((t.onset, t.burnin), (50, 50));
    }

    #[test]
    fn ramp_endpoints() {
        let spec = ScenarioSpec::tool_drift(300, 42);
        assert_eq!(spec.sampling_distribution(0), spec.base_dist);
        assert_eq!(spec.sampling_distribution(50), spec.base_dist);
        assert_eq!(spec.sampling_distribution(299), spec.target_dist);
        assert_eq!(spec.mix_fraction(175), 125.0 / 249.0);
        let d = ScenarioSpec::delegation_drift(300, 42);
        assert_eq!(d.expected_depth(0), 1.0);
        assert_eq!(d.expected_depth(299), 5.0);
    }

    #[test]
    fn first_event_is_base_depth_one() {
        let alphabet = AlphabetConfig::default();
        let spec = ScenarioSpec::tool_drift(300, 42);
        let e = scenario_event(&spec, 0, &mut Prng::new(42), &alphabet).unwrap();
        assert_eq!(e.depth, 1);
        assert_eq!(e.step, 0);
        assert!(scenario_event(&spec, 300, &mut Prng::new(42), &alphabet).is_err());
    }

    #[test]
    fn delegation_midpoint_depth_tracks_expectation() {
        let alphabet = AlphabetConfig::default();
        let mut spec = ScenarioSpec::delegation_drift(300, 42);
        // s = 0.5 exactly when the ramp is 250 long and t = onset + 125
        spec.ramp_steps = Some(250);
        let t = 175;
        assert_eq!(spec.expected_depth(t), 3.0);
        let mut rng = Prng::new(9);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| f64::from(scenario_event(&spec, t, &mut rng, &alphabet).unwrap().depth))
            .sum::<f64>()
            / n as f64;
        assert!((2.9..=3.1).contains(&mean), "{mean}");

        // the default ramp puts s slightly above one half at t = 175
        let spec = ScenarioSpec::delegation_drift(300, 42);
        let mut rng = Prng::new(10);
        let mean = (0..n)
            .map(|_| f64::from(scenario_event(&spec, t, &mut rng, &alphabet).unwrap().depth))
            .sum::<f64>()
            / n as f64;
        assert!((2.9..=3.1).contains(&mean), "{mean}");
    }

    #[test]
    fn fractional_depth_rule() {
        assert_eq!(realize_depth(1.0, 0.0), 1);
        assert_eq!(realize_depth(1.25, 0.2), 2);
        assert_eq!(realize_depth(1.25, 0.3), 1);
    }

    #[test]
    fn generation_is_deterministic_and_compliant() {
        let alphabet = AlphabetConfig::default();
        for kind in ScenarioKind::BUILT_IN {
            let spec = ScenarioSpec::built_in(kind, 1000, 42);
            let a = generate(&spec, &alphabet).unwrap();
            let b = generate(&spec, &alphabet).unwrap();
            assert_eq!(a, b);
            assert!(a.iter().all(|e| e.depth <= 5));
            assert!(!check_trace(&a, &alphabet).violated);
        }
    }

    #[test]
    fn scenario_validation() {
        let alphabet = AlphabetConfig::default();
        let mut spec = ScenarioSpec::tool_drift(300, 42);
        spec.burnin = 60;
        assert!(spec.validate(&alphabet).is_err());
        let mut spec = ScenarioSpec::tool_drift(300, 42);
        spec.target_depth = 0.5;
        assert!(spec.validate(&alphabet).is_err());
        assert!(ScenarioSpec::stationary(300, 1).validate(&alphabet).is_ok());
    }

    #[test]
    fn schedules() {
        let s = service_schedule();
        assert_eq!((s.total_steps, s.onset, s.seed), (250, 50, 99));
        assert_eq!(mock_agent_schedule(42).target_depth, 3.0);
        assert_eq!(mock_agent_schedule(5).seed, 5);
        assert_eq!(mock_agent_schedule(5).total_steps, 250);
    }

    #[test]
    fn interpolation_endpoints() {
        let alphabet = AlphabetConfig::default();
        let a = ToolDistribution::point_mass(6, 0);
        let b = ToolDistribution::point_mass(6, 3);
        let traces = hidden_drift_sequence(&a, &b, 2, 20, &mut Prng::new(1), &alphabet).unwrap();
        assert_eq!(traces.len(), 2);
        assert!(traces[0].iter().all(|e| e.tool.as_str() == "safe_read"));
        assert!(traces[1].iter().all(|e| e.tool.as_str() == "moderate_send"));
        assert!(hidden_drift_sequence(&a, &b, 1, 20, &mut Prng::new(1), &alphabet).is_err());
    }

    #[test]
    fn interpolation_rejects_forbidden_support() {
        let mut alphabet = AlphabetConfig::default();
        alphabet.tools.push("forbidden_exec".into());
        alphabet.risk.insert("forbidden_exec".into(), 1.0);
        let a = ToolDistribution::point_mass(7, 0);
        let b = ToolDistribution::point_mass(7, 6);
        assert!(hidden_drift_sequence(&a, &b, 3, 5, &mut Prng::new(1), &alphabet).is_err());
    }

    #[test]
    fn sampling_matches_distribution_at_scale() {
        let p = category_split(0.20, 0.60, 0.20);
        let mut rng = Prng::new(123);
        let n = 100_000;
        let mut counts = [0u64; 6];
        for _ in 0..n {
            counts[sample_index(p.probs(), rng.next_f64())] += 1;
        }
        let hat = ToolDistribution::from_counts(&counts).unwrap();
        let sup = hat
            .probs()
            .iter()
            .zip(p.probs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.01, "{sup}");
    }
}
