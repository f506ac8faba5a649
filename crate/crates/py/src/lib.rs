//! Python bindings: configuration, the online monitor, the statistical
//! kernels, the enforcement check, and the scenario harness.
//!
//! Structured results (snapshots, reports, run summaries) cross the boundary
//! as plain dicts and lists.

use iml_core::harness::{self, RunResult};
use iml_core::scenario::ScenarioKind;
use iml_core::{ImlError, MonitorConfig, ScenarioSpec, ToolDistribution, ToolId, TraceEvent};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn err(e: ImlError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn event(step: u64, tool: String, depth: u32) -> PyResult<TraceEvent> {
    let e = TraceEvent {
        step,
        tool: ToolId::new(tool).map_err(err)?,
        depth,
    };
    e.validate().map_err(err)?;
    Ok(e)
}

/// Validated monitor configuration (alphabet, risk model, scoring parameters).
#[pyclass(name = "Config", module = "iml", frozen)]
struct PyConfig {
    inner: MonitorConfig,
}

#[pymethods]
impl PyConfig {
    /// Parse a JSON document; an empty string gives the defaults.
    #[new]
    #[pyo3(signature = (json = ""))]
    fn new(json: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: iml_core::load_config(json).map_err(err)?,
        })
    }

    #[getter]
    fn tools(&self) -> Vec<String> {
        self.inner
            .alphabet
            .tools
            .iter()
            .map(|t| t.to_string())
            .collect()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn alert_level(&self, score: f64) -> String {
        self.inner.iml.alert_level(score).to_string()
    }
}

fn cfg_or_default(config: Option<&PyConfig>) -> MonitorConfig {
    config.map(|c| c.inner.clone()).unwrap_or_default()
}

#[pyfunction]
#[pyo3(signature = (json = ""))]
fn load_config(json: &str) -> PyResult<PyConfig> {
    PyConfig::new(json)
}

/// Online deviation monitor admitted on a burn-in trace of `(tool, depth)` pairs.
#[pyclass(name = "Monitor", module = "iml")]
struct PyMonitor {
    inner: iml_core::Monitor,
    cfg: MonitorConfig,
    next_step: u64,
}

#[pymethods]
impl PyMonitor {
    #[new]
    #[pyo3(signature = (burnin, config = None))]
    fn new(burnin: Vec<(String, u32)>, config: Option<&PyConfig>) -> PyResult<Self> {
        let cfg = cfg_or_default(config);
        let events = burnin
            .into_iter()
            .enumerate()
            .map(|(i, (tool, depth))| event(i as u64, tool, depth))
            .collect::<PyResult<Vec<_>>>()?;
        let inner = iml_core::Monitor::admit(&events, &cfg).map_err(err)?;
        Ok(PyMonitor {
            inner,
            cfg,
            next_step: 0,
        })
    }

    /// Score one event. Steps are assigned in call order unless given.
    #[pyo3(signature = (tool, depth, step = None))]
    fn observe<'py>(
        &mut self,
        py: Python<'py>,
        tool: String,
        depth: u32,
        step: Option<u64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let step = step.unwrap_or(self.next_step);
        let report = self
            .inner
            .observe(&event(step, tool, depth)?, &self.cfg)
            .map_err(err)?;
        self.next_step = step + 1;
        to_py(py, &report)
    }

    #[getter]
    fn snapshot<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.snapshot())
    }

    #[getter]
    fn d_ema(&self) -> f64 {
        self.inner.current_ema()
    }

    #[getter]
    fn observed(&self) -> u64 {
        self.inner.observed()
    }

    /// Forget all observations; the admission snapshot stays frozen.
    fn clear(&mut self) {
        self.inner.clear();
        self.next_step = 0;
    }
}

/// Jensen-Shannon divergence in bits between two probability vectors.
#[pyfunction]
fn js_divergence(p: Vec<f64>, q: Vec<f64>) -> PyResult<f64> {
    let p = ToolDistribution::new(p).map_err(err)?;
    let q = ToolDistribution::new(q).map_err(err)?;
    iml_core::js_divergence(&p, &q).map_err(err)
}

/// Empirical mutual information `I(label; signal)` and label entropy, in bits.
#[pyfunction]
fn mutual_information(labels: Vec<bool>, signals: Vec<bool>) -> PyResult<(f64, f64)> {
    iml_core::empirical_mutual_information(&labels, &signals).map_err(err)
}

/// Enforcement decision for a single event: `(violated, reasons)`.
#[pyfunction]
#[pyo3(signature = (tool, depth, config = None))]
fn check_event(
    tool: String,
    depth: u32,
    config: Option<&PyConfig>,
) -> PyResult<(bool, Vec<String>)> {
    let cfg = cfg_or_default(config);
    let decision = iml_core::check_event(&event(0, tool, depth)?, &cfg.alphabet);
    let reasons = decision
        .reasons
        .iter()
        .map(|v| format!("{:?}", v.kind))
        .collect();
    Ok((decision.violated, reasons))
}

fn spec_for(name: &str, steps: u64, seed: u64) -> PyResult<ScenarioSpec> {
    match name {
        "stationary" => Ok(ScenarioSpec::stationary(steps, seed)),
        "service_experiment" => Ok(iml_core::service_schedule().with_seed(seed)),
        "mock_agent" => Ok(iml_core::mock_agent_schedule(seed)),
        other => match ScenarioKind::parse(other) {
            Some(kind) if kind != ScenarioKind::Custom => {
                Ok(ScenarioSpec::built_in(kind, steps, seed))
            }
            _ => Err(PyValueError::new_err(format!("unknown scenario `{other}`"))),
        },
    }
}

/// Run a seeded scenario. Returns a dict with `spec`, `snapshot`, `records`
/// and `summary`.
#[pyfunction]
#[pyo3(signature = (scenario, steps = 300, seed = 42, config = None))]
fn run_scenario<'py>(
    py: Python<'py>,
    scenario: &str,
    steps: u64,
    seed: u64,
    config: Option<&PyConfig>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = cfg_or_default(config);
    let spec = spec_for(scenario, steps, seed)?;
    let result: RunResult = py
        .detach(|| harness::run_scenario(&spec, &cfg))
        .map_err(err)?;
    to_py(py, &result)
}

#[pymodule]
fn iml(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMonitor>()?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(check_event, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    Ok(())
}
