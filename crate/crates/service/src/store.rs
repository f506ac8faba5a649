//! File-backed session store.
//!
//! Layout under the storage root:
//!
//! ```text
//! sessions/<id>/state.json     full session state, replaced atomically
//! sessions/<id>/reports.jsonl  one scored record per ingested event
//! quarantine/<id>-<unix-ms>/   sessions that failed to load
//! ```
//!
//! An ingest appends (and fsyncs) its report line before the state file is
//! replaced, so the state's `report_count` never runs ahead of the log. On
//! recovery any log lines past `report_count` belong to an unacknowledged
//! ingest and are truncated.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use iml_core::report::write_atomic;
use iml_core::{
    check_event, AdmissionSnapshot, BaselineState, Monitor, MonitorConfig, RunRecord, ToolId,
    TraceEvent,
};
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, RwLock};

use crate::error::{ServiceError, ServiceResult};

const STATE_FILE: &str = "state.json";
const REPORT_FILE: &str = "reports.jsonl";

/// Session ids are path components, so keep them to a safe alphabet.
pub fn validate_session_id(id: &str) -> ServiceResult<()> {
    let ok = !id.is_empty()
        && id.len() <= 64
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-');
    if ok {
        Ok(())
    } else {
        Err(ServiceError::Invalid(format!(
            "session id must match [A-Za-z0-9_-]{{1,64}}, got `{id}`"
        )))
    }
}

/// Wire form of an event. Any client-supplied `step` is ignored: the
/// service assigns step indices in arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventIn {
    pub tool: String,
    pub depth: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

impl EventIn {
    fn at(&self, step: u64) -> ServiceResult<TraceEvent> {
        let tool = ToolId::new(self.tool.clone())?;
        let event = TraceEvent {
            step,
            tool,
            depth: self.depth,
        };
        event.validate()?;
        Ok(event)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Phase {
    PreAdmission,
    Active {
        monitor: Box<Monitor>,
        baseline: BaselineState,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub config: MonitorConfig,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
    /// Step index the next ingested event receives.
    pub next_step: u64,
    /// Number of lines in the report log covered by this state.
    pub report_count: u64,
    pub enforcement_count: u64,
    pub last: Option<RunRecord>,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReply {
    #[serde(flatten)]
    pub record: RunRecord,
    pub alert: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReply {
    pub session_id: String,
    pub status: String,
    pub events: u64,
    pub enforcement_count: u64,
    pub d_ema: f64,
    pub d_t: f64,
    pub d_c: f64,
    pub d_l: f64,
    pub alert: String,
    pub baseline: f64,
    pub snapshot: Option<AdmissionSnapshot>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn io_err(path: &Path, err: std::io::Error) -> ServiceError {
    ServiceError::Storage(format!("{}: {err}", path.display()))
}

pub struct Session {
    state: SessionState,
    dir: PathBuf,
    /// Byte length of the acknowledged part of the report log.
    log_len: u64,
}

impl Session {
    pub fn state(&self) -> &SessionState {
        &self.state
    }

    fn persist(&self, state: &SessionState) -> ServiceResult<()> {
        let body = serde_json::to_vec(state).expect("session state serializes");
        write_atomic(&self.dir.join(STATE_FILE), &body)?;
        Ok(())
    }

    fn append_report(&mut self, line: &[u8]) -> ServiceResult<()> {
        let path = self.dir.join(REPORT_FILE);
        let result = (|| {
            let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
            f.write_all(line)?;
            f.sync_data()
        })();
        if let Err(err) = result {
            // drop any partial line so the log stays aligned with the state
            if let Ok(f) = OpenOptions::new().write(true).open(&path) {
                let _ = f.set_len(self.log_len);
            }
            return Err(io_err(&path, err));
        }
        self.log_len += line.len() as u64;
        Ok(())
    }

    pub fn admit(&mut self, batch: &[EventIn]) -> ServiceResult<AdmissionSnapshot> {
        if !matches!(self.state.phase, Phase::PreAdmission) {
            return Err(ServiceError::Conflict(format!(
                "session `{}` already admitted",
                self.state.session_id
            )));
        }
        let events = batch
            .iter()
            .enumerate()
            .map(|(i, e)| e.at(i as u64))
            .collect::<ServiceResult<Vec<_>>>()?;
        for e in &events {
            self.state
                .config
                .alphabet
                .require_index(e.tool.as_str())
                .map_err(|err| {
                    // forbidden tools are reported as such rather than as unknown
                    if check_event(e, &self.state.config.alphabet).violated {
                        iml_core::ImlError::NonCompliantBurnIn { step: e.step }
                    } else {
                        err
                    }
                })?;
        }
        let monitor = Monitor::admit(&events, &self.state.config)?;
        let snapshot = monitor.snapshot().clone();
        let mut next = self.state.clone();
        next.phase = Phase::Active {
            monitor: Box::new(monitor),
            baseline: BaselineState::with_default_window(self.state.config.alphabet.len()),
        };
        next.updated_at_ms = now_ms();
        self.persist(&next)?;
        self.state = next;
        Ok(snapshot)
    }

    pub fn ingest(&mut self, event: &EventIn) -> ServiceResult<IngestReply> {
        let Phase::Active { monitor, baseline } = &self.state.phase else {
            return Err(ServiceError::Conflict(format!(
                "session `{}` is awaiting admission",
                self.state.session_id
            )));
        };
        let cfg = &self.state.config;
        let event = event.at(self.state.next_step)?;
        let mut monitor = monitor.clone();
        let mut baseline = baseline.clone();
        let report = monitor.observe(&event, cfg)?;
        let b = baseline.observe(&event, &cfg.alphabet)?;
        let record = RunRecord {
            step: event.step,
            tool: event.tool,
            depth: event.depth,
            enforcement: report.enforcement_violated,
            d_t: report.d_t,
            d_c: report.d_c,
            d_l: report.d_l,
            d_raw: report.d_raw,
            d_ema: report.d_ema,
            baseline: b,
        };
        let mut line = serde_json::to_vec(&record).expect("record serializes");
        line.push(b'\n');

        let mut next = self.state.clone();
        next.phase = Phase::Active { monitor, baseline };
        next.next_step += 1;
        next.report_count += 1;
        next.enforcement_count += u64::from(record.enforcement);
        next.last = Some(record.clone());
        next.updated_at_ms = now_ms();

        self.append_report(&line)?;
        if let Err(err) = self.persist(&next) {
            let path = self.dir.join(REPORT_FILE);
            self.log_len -= line.len() as u64;
            if let Ok(f) = OpenOptions::new().write(true).open(&path) {
                let _ = f.set_len(self.log_len);
            }
            return Err(err);
        }
        self.state = next;
        Ok(IngestReply {
            record,
            alert: report.alert,
        })
    }

    pub fn status(&self) -> StatusReply {
        let s = &self.state;
        let (status, snapshot) = match &s.phase {
            Phase::PreAdmission => ("pre_admission", None),
            Phase::Active { monitor, .. } => ("active", Some(monitor.snapshot().clone())),
        };
        let last = s.last.as_ref();
        let d_ema = last.map_or(0.0, |r| r.d_ema);
        StatusReply {
            session_id: s.session_id.clone(),
            status: status.to_string(),
            events: s.report_count,
            enforcement_count: s.enforcement_count,
            d_ema,
            d_t: last.map_or(0.0, |r| r.d_t),
            d_c: last.map_or(0.0, |r| r.d_c),
            d_l: last.map_or(0.0, |r| r.d_l),
            alert: s.config.iml.alert_level(d_ema).to_string(),
            baseline: last.map_or(0.0, |r| r.baseline),
            snapshot,
        }
    }

    /// The acknowledged report log as raw JSONL.
    pub fn report(&self) -> ServiceResult<Vec<u8>> {
        let path = self.dir.join(REPORT_FILE);
        let mut bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(io_err(&path, e)),
        };
        bytes.truncate(self.log_len as usize);
        Ok(bytes)
    }

    /// Drop every observation and report but keep the frozen snapshot.
    pub fn reset(&mut self) -> ServiceResult<StatusReply> {
        let mut next = self.state.clone();
        if let Phase::Active { monitor, baseline } = &mut next.phase {
            monitor.clear();
            baseline.clear();
        }
        next.next_step = 0;
        next.report_count = 0;
        next.enforcement_count = 0;
        next.last = None;
        next.updated_at_ms = now_ms();
        self.persist(&next)?;
        self.state = next;
        // state now covers zero lines; a crash before this truncation is
        // repaired by recovery
        let path = self.dir.join(REPORT_FILE);
        File::create(&path).map_err(|e| io_err(&path, e))?;
        self.log_len = 0;
        Ok(self.status())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Quarantined {
    pub session_id: String,
    pub reason: String,
    pub moved_to: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub loaded: Vec<String>,
    pub quarantined: Vec<Quarantined>,
}

pub struct Store {
    root: PathBuf,
    default_config: MonitorConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    quarantined: RwLock<HashMap<String, String>>,
    id_counter: AtomicU64,
}

fn load_session(dir: &Path) -> Result<Session, String> {
    let state_path = dir.join(STATE_FILE);
    let bytes = fs::read(&state_path).map_err(|e| format!("cannot read state: {e}"))?;
    let state: SessionState =
        serde_json::from_slice(&bytes).map_err(|e| format!("corrupt state file: {e}"))?;
    state
        .config
        .validate()
        .map_err(|e| format!("invalid stored config: {e}"))?;

    let log_path = dir.join(REPORT_FILE);
    let log = match fs::read(&log_path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(e) => return Err(format!("cannot read report log: {e}")),
    };
    let mut log_len = 0usize;
    for _ in 0..state.report_count {
        match log[log_len..].iter().position(|&b| b == b'\n') {
            Some(i) => log_len += i + 1,
            None => {
                return Err(format!(
                    "report log holds fewer than {} complete lines",
                    state.report_count
                ))
            }
        }
    }
    if log_len < log.len() {
        let f = OpenOptions::new()
            .write(true)
            .open(&log_path)
            .map_err(|e| format!("cannot truncate report log: {e}"))?;
        f.set_len(log_len as u64)
            .and_then(|_| f.sync_all())
            .map_err(|e| format!("cannot truncate report log: {e}"))?;
    }
    let _ = fs::remove_file(dir.join(format!("{STATE_FILE}.tmp")));
    Ok(Session {
        state,
        dir: dir.to_path_buf(),
        log_len: log_len as u64,
    })
}

impl Store {
    /// Open (creating if needed) a storage root and load every session in it.
    /// Sessions that fail to load are moved aside and listed in the report.
    pub fn open(
        root: impl Into<PathBuf>,
        default_config: MonitorConfig,
    ) -> ServiceResult<(Store, RecoveryReport)> {
        default_config.validate()?;
        let root = root.into();
        let sessions_dir = root.join("sessions");
        fs::create_dir_all(&sessions_dir).map_err(|e| io_err(&sessions_dir, e))?;
        let mut report = RecoveryReport::default();
        let mut sessions = HashMap::new();
        let mut quarantined = HashMap::new();
        let mut entries: Vec<_> = fs::read_dir(&sessions_dir)
            .map_err(|e| io_err(&sessions_dir, e))?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let id = entry.file_name().to_string_lossy().into_owned();
            let dir = entry.path();
            let loaded = validate_session_id(&id)
                .map_err(|e| e.to_string())
                .and_then(|_| load_session(&dir))
                .and_then(|s| {
                    if s.state.session_id == id {
                        Ok(s)
                    } else {
                        Err(format!("state belongs to `{}`", s.state.session_id))
                    }
                });
            match loaded {
                Ok(session) => {
                    report.loaded.push(id.clone());
                    sessions.insert(id, Arc::new(Mutex::new(session)));
                }
                Err(reason) => {
                    let moved_to = quarantine_dir(&root, &id, &dir);
                    tracing::warn!(session = %id, %reason, "quarantined session");
                    quarantined.insert(id.clone(), reason.clone());
                    report.quarantined.push(Quarantined {
                        session_id: id,
                        reason,
                        moved_to,
                    });
                }
            }
        }
        Ok((
            Store {
                root,
                default_config,
                sessions: RwLock::new(sessions),
                quarantined: RwLock::new(quarantined),
                id_counter: AtomicU64::new(0),
            },
            report,
        ))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub async fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().await.keys().cloned().collect();
        ids.sort();
        ids
    }

    pub async fn get(&self, id: &str) -> ServiceResult<Arc<Mutex<Session>>> {
        if let Some(s) = self.sessions.read().await.get(id) {
            return Ok(s.clone());
        }
        if let Some(reason) = self.quarantined.read().await.get(id) {
            return Err(ServiceError::Quarantined {
                id: id.to_string(),
                reason: reason.clone(),
            });
        }
        Err(ServiceError::NotFound(id.to_string()))
    }

    fn fresh_id(&self) -> String {
        let n = self.id_counter.fetch_add(1, Ordering::Relaxed);
        format!("s{:x}-{n}", now_ms())
    }

    pub async fn create(
        &self,
        id: Option<String>,
        config: Option<MonitorConfig>,
    ) -> ServiceResult<StatusReply> {
        let config = match config {
            Some(c) => {
                c.validate()?;
                c
            }
            None => self.default_config.clone(),
        };
        let mut sessions = self.sessions.write().await;
        let id = match id {
            Some(id) => {
                validate_session_id(&id)?;
                id
            }
            None => loop {
                let id = self.fresh_id();
                if !sessions.contains_key(&id) {
                    break id;
                }
            },
        };
        if sessions.contains_key(&id) || self.quarantined.read().await.contains_key(&id) {
            return Err(ServiceError::Conflict(format!(
                "session `{id}` already exists"
            )));
        }
        let dir = self.root.join("sessions").join(&id);
        fs::create_dir(&dir).map_err(|e| match e.kind() {
            std::io::ErrorKind::AlreadyExists => {
                ServiceError::Conflict(format!("session `{id}` already exists"))
            }
            _ => io_err(&dir, e),
        })?;
        let now = now_ms();
        let session = Session {
            state: SessionState {
                session_id: id.clone(),
                config,
                created_at_ms: now,
                updated_at_ms: now,
                next_step: 0,
                report_count: 0,
                enforcement_count: 0,
                last: None,
                phase: Phase::PreAdmission,
            },
            dir: dir.clone(),
            log_len: 0,
        };
        if let Err(err) = session.persist(&session.state) {
            let _ = fs::remove_dir_all(&dir);
            return Err(err);
        }
        let status = session.status();
        sessions.insert(id, Arc::new(Mutex::new(session)));
        Ok(status)
    }
}

fn quarantine_dir(root: &Path, id: &str, dir: &Path) -> Option<PathBuf> {
    let qdir = root.join("quarantine");
    fs::create_dir_all(&qdir).ok()?;
    let target = qdir.join(format!("{id}-{}", now_ms()));
    fs::rename(dir, &target).ok()?;
    Some(target)
}
