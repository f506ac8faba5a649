use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use iml_core::harness::{self, DEFAULT_EPS_EST};
use iml_core::report::{emit_report, write_atomic, ReportFormat};
use iml_core::scenario::ScenarioKind;
use iml_core::{
    load_config, mock_agent_schedule, service_schedule, ImlError, MonitorConfig, RunResult,
    ScenarioSpec, TraceEvent,
};

mod tables;

#[derive(Parser)]
#[command(
    name = "iml",
    version,
    about = "Behavioral drift monitoring for agent action traces"
)]
struct Cli {
    /// JSON configuration file (alphabet and scoring parameters).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
    Svg,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => ReportFormat::Csv,
            Format::Jsonl => ReportFormat::Jsonl,
            Format::Svg => ReportFormat::Svg,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded scenario and write the full run result as JSON.
    Simulate {
        /// tool_drift, delegation_drift, context_drift, stationary,
        /// service_experiment or mock_agent.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 300)]
        steps: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the run result here instead of stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write per-step reports into this directory.
        #[arg(long)]
        report_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_values_t = [Format::Csv, Format::Svg])]
        format: Vec<Format>,
        #[arg(long, default_value_t = 0.20)]
        theta: f64,
    },
    /// All built-in scenarios at 300 and 1000 steps: per-step CSV and SVG
    /// files plus the summary, bound and long-horizon tables.
    Bench {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "bench")]
        out: PathBuf,
    },
    /// Two enforcement-compliant segments with different deviation scores.
    Witness {
        #[arg(long, default_value = "tool_drift")]
        scenario: String,
        #[arg(long, default_value_t = 300)]
        steps: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Compare observed detection times against the linear-growth delay bound.
    BoundCheck {
        #[arg(long, default_value_t = 300)]
        steps: u64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 0.20)]
        theta: f64,
        #[arg(long, default_value_t = DEFAULT_EPS_EST)]
        eps: f64,
    },
    /// Mutual information between trace compliance labels and the
    /// enforcement signal, with and without depth-poisoned drifted traces.
    MiCheck {
        #[arg(long, default_value_t = 1000)]
        traces: usize,
        #[arg(long, default_value_t = 50)]
        length: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// One schedule over several seeds.
    MultiSeed {
        #[arg(long, default_value = "mock_agent")]
        schedule: String,
        #[arg(long, value_delimiter = ',', default_value = "42,1,2,3,4,5")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 300)]
        steps: u64,
        #[arg(long, default_value_t = 0.20)]
        theta: f64,
    },
    /// Run the HTTP monitoring service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long, default_value = "iml-data")]
        storage: PathBuf,
    },
    /// Score a captured JSONL trace (`{"tool": .., "depth": .., "step"?: ..}` per line).
    Replay {
        #[arg(long)]
        input: PathBuf,
        /// Number of leading events used as the admission burn-in.
        #[arg(long, default_value_t = 50)]
        burnin: usize,
        /// Write per-step JSONL reports here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn scenario_spec(name: &str, steps: u64, seed: u64) -> Result<ScenarioSpec> {
    let spec = match name {
        "stationary" => ScenarioSpec::stationary(steps, seed),
        "service_experiment" => service_schedule().with_seed(seed),
        "mock_agent" => mock_agent_schedule(seed),
        other => match ScenarioKind::parse(other) {
            Some(kind) if kind != ScenarioKind::Custom => ScenarioSpec::built_in(kind, steps, seed),
            _ => bail!("unknown scenario `{other}`"),
        },
    };
    Ok(spec)
}

fn load(path: Option<&Path>) -> Result<MonitorConfig> {
    match path {
        None => Ok(MonitorConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(load_config(&text)?)
        }
    }
}

fn stdout_line(s: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    writeln!(out, "{s}")?;
    Ok(())
}

fn simulate(
    cfg: &MonitorConfig,
    spec: &ScenarioSpec,
    output: Option<&Path>,
    report_dir: Option<&Path>,
    formats: &[Format],
    theta: f64,
) -> Result<()> {
    let result = harness::run_scenario(spec, cfg)?;
    let json = serde_json::to_string_pretty(&result)?;
    match output {
        Some(path) => {
            write_atomic(path, json.as_bytes())?;
            eprintln!("wrote {}", path.display());
        }
        None => stdout_line(&json)?,
    }
    if let Some(dir) = report_dir {
        for &f in formats {
            let path = emit_report(&result, f.into(), dir, theta)?;
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn bench(cfg: &MonitorConfig, seed: u64, out: &Path) -> Result<()> {
    let start = Instant::now();
    let specs: Vec<ScenarioSpec> = [300, 1000]
        .into_iter()
        .flat_map(|steps| {
            ScenarioKind::BUILT_IN
                .into_iter()
                .map(move |k| ScenarioSpec::built_in(k, steps, seed))
        })
        .collect();
    let results = harness::run_many(&specs, cfg)?;
    for r in &results {
        emit_report(r, ReportFormat::Csv, out, 0.20)?;
        emit_report(r, ReportFormat::Svg, out, 0.20)?;
    }
    let (short, long) = results.split_at(3);
    let bounds: Vec<(String, Result<harness::BoundCheck, ImlError>)> = short
        .iter()
        .map(|r| (r.name(), harness::check_bound(r, 0.20, DEFAULT_EPS_EST)))
        .collect();
    let docs = [
        ("summary_300.txt", tables::summary_table(short)),
        ("bounds_300.txt", tables::bound_table(&bounds)),
        ("summary_1000.txt", tables::summary_table(long)),
    ];
    for (name, body) in &docs {
        write_atomic(&out.join(name), body.as_bytes())?;
        stdout_line(body)?;
    }
    eprintln!(
        "wrote {} files to {} in {:.2?}",
        results.len() * 2 + docs.len(),
        out.display(),
        start.elapsed()
    );
    Ok(())
}

fn read_trace(path: &Path) -> Result<Vec<TraceEvent>> {
    #[derive(serde::Deserialize)]
    struct Line {
        step: Option<u64>,
        tool: String,
        depth: u32,
    }
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut events = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let l: Line = serde_json::from_str(&line).with_context(|| format!("line {}", i + 1))?;
        events.push(TraceEvent {
            step: l.step.unwrap_or(events.len() as u64),
            tool: iml_core::ToolId::new(l.tool)?,
            depth: l.depth,
        });
    }
    Ok(events)
}

fn replay(cfg: &MonitorConfig, input: &Path, burnin: usize, output: Option<&Path>) -> Result<()> {
    let events = read_trace(input)?;
    if events.is_empty() {
        return Err(ImlError::NoObservations.into());
    }
    let result: RunResult = harness::score_events(&events, burnin, cfg, None)?;
    if let Some(path) = output {
        write_atomic(path, iml_core::report::to_jsonl(&result.records).as_bytes())?;
        eprintln!("wrote {}", path.display());
    }
    stdout_line(&serde_json::to_string_pretty(&result.summary)?)
}

fn serve(cfg: MonitorConfig, addr: SocketAddr, storage: PathBuf) -> Result<()> {
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let (store, recovery) = iml_service::Store::open(&storage, cfg)?;
        for q in &recovery.quarantined {
            eprintln!("quarantined session {}: {}", q.session_id, q.reason);
        }
        let listener = tokio::net::TcpListener::bind(addr).await?;
        stdout_line(&format!(
            "listening on http://{} ({} sessions recovered)",
            listener.local_addr()?,
            recovery.loaded.len()
        ))?;
        iml_service::run(listener, Arc::new(store)).await?;
        Ok(())
    })
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate {
            scenario,
            steps,
            seed,
            output,
            report_dir,
            format,
            theta,
        } => {
            let spec = scenario_spec(&scenario, steps, seed)?;
            simulate(
                &cfg,
                &spec,
                output.as_deref(),
                report_dir.as_deref(),
                &format,
                theta,
            )
        }
        Command::Bench { seed, out } => bench(&cfg, seed, &out),
        Command::Witness {
            scenario,
            steps,
            seed,
            json,
        } => {
            let result = harness::run_scenario(&scenario_spec(&scenario, steps, seed)?, &cfg)?;
            let w = harness::extract_witness(&result, &cfg)?;
            if json {
                stdout_line(&serde_json::to_string_pretty(&w)?)
            } else {
                stdout_line(&tables::witness_text(&w, &cfg))
            }
        }
        Command::BoundCheck {
            steps,
            seed,
            theta,
            eps,
        } => {
            let specs: Vec<ScenarioSpec> = ScenarioKind::BUILT_IN
                .into_iter()
                .map(|k| ScenarioSpec::built_in(k, steps, seed))
                .collect();
            let results = harness::run_many(&specs, &cfg)?;
            let rows: Vec<_> = results
                .iter()
                .map(|r| (r.name(), harness::check_bound(r, theta, eps)))
                .collect();
            stdout_line(&tables::bound_table(&rows))?;
            if rows
                .iter()
                .all(|(_, b)| b.as_ref().is_ok_and(|b| b.satisfied))
            {
                Ok(())
            } else {
                bail!("delay bound not satisfied for every scenario")
            }
        }
        Command::MiCheck {
            traces,
            length,
            seed,
        } => {
            let clean = harness::mi_experiment(traces, length, seed, false, &cfg)?;
            let poisoned = harness::mi_experiment(traces, length, seed, true, &cfg)?;
            stdout_line(&tables::mi_text(traces, &clean, &poisoned))
        }
        Command::MultiSeed {
            schedule,
            seeds,
            steps,
            theta,
        } => {
            let base = scenario_spec(&schedule, steps, seeds.first().copied().unwrap_or(42))?;
            let table = harness::multi_seed_study(&base, &seeds, theta, &cfg)?;
            stdout_line(&tables::multi_seed_text(&schedule, &table))
        }
        Command::Serve { addr, storage } => serve(cfg, addr, storage),
        Command::Replay {
            input,
            burnin,
            output,
        } => replay(&cfg, &input, burnin, output.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
