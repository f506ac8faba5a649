//! CSV, JSONL, and SVG output for run results.
//!
//! CSV columns are fixed: `step,tool,depth,enforcement,d_t,d_c,d_l,d_raw,d_ema,baseline`.
//! Floats use Rust's shortest round-trip formatting so reruns are byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use crate::error::{ImlError, Result};
use crate::harness::{RunRecord, RunResult};

pub const CSV_HEADER: &str = "step,tool,depth,enforcement,d_t,d_c,d_l,d_raw,d_ema,baseline";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Jsonl,
    Svg,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Jsonl => "jsonl",
            ReportFormat::Svg => "svg",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "csv" => Some(ReportFormat::Csv),
            "jsonl" => Some(ReportFormat::Jsonl),
            "svg" => Some(ReportFormat::Svg),
            _ => None,
        }
    }
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| ImlError::Io(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f =
            fs::File::create(&tmp).map_err(|e| ImlError::Io(format!("{}: {e}", tmp.display())))?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).map_err(|e| ImlError::Io(format!("{}: {e}", path.display())))?;
    Ok(())
}

pub fn csv_row(r: &RunRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.step,
        r.tool,
        r.depth,
        u8::from(r.enforcement),
        r.d_t,
        r.d_c,
        r.d_l,
        r.d_raw,
        r.d_ema,
        r.baseline
    )
}

pub fn to_csv(records: &[RunRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&csv_row(r));
        out.push('\n');
    }
    out
}

pub fn to_jsonl(records: &[RunRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| ImlError::Io(format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const PAD: f64 = 40.0;

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str, label: &str) -> String {
    let mut pts = String::new();
    for (x, y) in points {
        let _ = write!(pts, "{x:.2},{y:.2} ");
    }
    format!(
        "<polyline data-series=\"{label}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
        pts.trim_end()
    )
}

/// Line chart of the smoothed score and the baseline, with a horizontal
/// threshold line and a vertical onset marker.
pub fn to_svg(result: &RunResult, theta: f64) -> String {
    let records = &result.records;
    let n = records.len().max(2) as f64;
    let x = |i: usize| PAD + (WIDTH - 2.0 * PAD) * i as f64 / (n - 1.0);
    let y = |v: f64| HEIGHT - PAD - (HEIGHT - 2.0 * PAD) * v.clamp(0.0, 1.0);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    let _ = writeln!(
        svg,
        "<title>{}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>",
        result.name()
    );
    let _ = writeln!(
        svg,
        "<line data-marker=\"threshold\" x1=\"{PAD}\" y1=\"{ty:.2}\" x2=\"{x2}\" y2=\"{ty:.2}\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>",
        ty = y(theta),
        x2 = WIDTH - PAD
    );
    if let Some(spec) = &result.spec {
        if let Some(i) = records.iter().position(|r| r.step >= spec.onset) {
            let _ = writeln!(
                svg,
                "<line data-marker=\"onset\" x1=\"{ox:.2}\" y1=\"{PAD}\" x2=\"{ox:.2}\" y2=\"{y2}\" stroke=\"gray\" stroke-dasharray=\"2 3\"/>",
                ox = x(i),
                y2 = HEIGHT - PAD
            );
        }
    }
    svg.push_str(&polyline(
        records.iter().enumerate().map(|(i, r)| (x(i), y(r.d_ema))),
        "#1f3b73",
        "d_ema",
    ));
    svg.push_str(&polyline(
        records
            .iter()
            .enumerate()
            .map(|(i, r)| (x(i), y(r.baseline))),
        "#c0392b",
        "baseline",
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Write `result` in `format` under `dir`, returning the file path.
pub fn emit_report(
    result: &RunResult,
    format: ReportFormat,
    dir: &Path,
    theta: f64,
) -> Result<PathBuf> {
    if result.records.is_empty() {
        return Err(ImlError::NoObservations);
    }
    fs::create_dir_all(dir).map_err(|e| ImlError::Io(format!("{}: {e}", dir.display())))?;
    let path = dir.join(format!("{}.{}", result.name(), format.extension()));
    let body = match format {
        ReportFormat::Csv => to_csv(&result.records),
        ReportFormat::Jsonl => to_jsonl(&result.records),
        ReportFormat::Svg => to_svg(result, theta),
    };
    write_atomic(&path, body.as_bytes())?;
    Ok(path)
}
