//! Plain-text tables for terminal output.

use std::fmt::Write as _;

use iml_core::harness::{BoundCheck, MiOutcome, MultiSeedTable, SegmentReport, WitnessReport};
use iml_core::{ImlError, MonitorConfig, RunResult};

fn opt_step(s: Option<u64>) -> String {
    s.map_or_else(|| "-".to_string(), |s| s.to_string())
}

pub fn summary_table(results: &[RunResult]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>5} {:>8} {:>7} {:>7} {:>9} {:>9} {:>8} {:>8}",
        "scenario", "enf", "d_final", "T*0.20", "T*0.30", "base_pk", "base_fin", "decay", "lead"
    );
    for r in results {
        let s = &r.summary;
        let _ = writeln!(
            out,
            "{:<28} {:>5} {:>8.4} {:>7} {:>7} {:>9.4} {:>9.4} {:>+8.4} {:>+8.4}",
            r.name(),
            s.enforcement_count,
            s.d_final,
            opt_step(s.detection(0.20)),
            opt_step(s.detection(0.30)),
            s.baseline_peak,
            s.baseline_final,
            s.baseline_decay(),
            s.lead_over_baseline()
        );
    }
    out
}

pub fn bound_table(rows: &[(String, Result<BoundCheck, ImlError>)]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<28} {:>10} {:>6} {:>9} {:>8} {:>6}",
        "scenario", "alpha_hat", "t0", "bound", "observed", "holds"
    );
    for (name, row) in rows {
        match row {
            Ok(b) => {
                let _ = writeln!(
                    out,
                    "{:<28} {:>10.6} {:>6} {:>9.1} {:>8} {:>6}",
                    name,
                    b.alpha_hat,
                    b.t0,
                    b.bound,
                    b.observed,
                    if b.satisfied { "yes" } else { "no" }
                );
            }
            Err(e) => {
                let _ = writeln!(out, "{name:<28} {e}");
            }
        }
    }
    out
}

fn segment(out: &mut String, label: &str, s: &SegmentReport, cfg: &MonitorConfig) {
    let _ = writeln!(out, "{label}: steps {}..={}", s.first_step, s.last_step);
    for (tool, p) in cfg.alphabet.tools.iter().zip(s.distribution.probs()) {
        let _ = writeln!(out, "    {tool:<16} {p:.3}");
    }
    let _ = writeln!(
        out,
        "    g = {}  d_t = {:.4}  d_c = {:.4}  d_l = {:.4}  d_hat = {:.4}",
        s.g, s.d_t, s.d_c, s.d_l, s.d_hat
    );
}

pub fn witness_text(w: &WitnessReport, cfg: &MonitorConfig) -> String {
    let mut out = String::new();
    segment(&mut out, "tau1 (admission)", &w.admission, cfg);
    segment(&mut out, "tau2 (drifted)", &w.drifted, cfg);
    let _ = write!(
        out,
        "enforcement: g(tau1) = {}, g(tau2) = {}; separation |d_hat(tau2) - d_hat(tau1)| = {:.4}",
        w.admission.g, w.drifted.g, w.separation
    );
    out
}

pub fn mi_text(n: usize, clean: &MiOutcome, poisoned: &MiOutcome) -> String {
    format!(
        "{n} traces\n\
         compliant drift:  I(label; g) = {:.4} bits, H(label) = {:.4} bits\n\
         depth-11 drift:   I(label; g) = {:.4} bits, H(label) = {:.4} bits",
        clean.mi_bits, clean.entropy_bits, poisoned.mi_bits, poisoned.entropy_bits
    )
}

pub fn multi_seed_text(schedule: &str, t: &MultiSeedTable) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{schedule}, theta = {}", t.theta);
    let _ = writeln!(
        out,
        "{:>8} {:>8} {:>7} {:>5}",
        "seed", "d_final", "T*", "enf"
    );
    for r in &t.rows {
        let _ = writeln!(
            out,
            "{:>8} {:>8.4} {:>7} {:>5}",
            r.seed,
            r.d_final,
            opt_step(r.detection),
            r.enforcement_count
        );
    }
    let _ = write!(out, "d_final {:.3} ± {:.3}", t.d_final_mean, t.d_final_std);
    if let Some((m, s)) = t.detection_mean_std {
        let _ = write!(out, "   T* {m:.1} ± {s:.1}");
    }
    let _ = write!(out, "   enforcement total {}", t.enforcement_total());
    out
}
