//! HTTP monitoring service.
//!
//! | method | path                       | body                          |
//! |--------|----------------------------|-------------------------------|
//! | POST   | `/sessions`                | `{session_id?, config?}`      |
//! | POST   | `/sessions/{id}/admit`     | `{events: [{tool, depth}]}`   |
//! | POST   | `/sessions/{id}/events`    | `{tool, depth}`               |
//! | GET    | `/sessions/{id}/status`    |                               |
//! | GET    | `/sessions/{id}/report`    | JSONL response                |
//! | POST   | `/sessions/{id}/reset`     |                               |
//!
//! Each session is guarded by its own mutex, so requests to one session are
//! applied in arrival order while different sessions proceed in parallel.

pub mod error;
pub mod store;

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use iml_core::{AdmissionSnapshot, MonitorConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use error::{ServiceError, ServiceResult};
pub use store::{EventIn, IngestReply, RecoveryReport, StatusReply, Store};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub session_id: Option<String>,
    pub config: Option<MonitorConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmitRequest {
    pub events: Vec<EventIn>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AdmitReply {
    pub session_id: String,
    pub status: String,
    pub snapshot: AdmissionSnapshot,
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> ServiceResult<T> {
    serde_json::from_slice(body)
        .map_err(|e| ServiceError::Invalid(format!("malformed request: {e}")))
}

async fn create(State(store): State<Arc<Store>>, body: Bytes) -> ServiceResult<impl IntoResponse> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        parse(&body)?
    };
    let status = store.create(req.session_id, req.config).await?;
    tracing::info!(session = %status.session_id, "created session");
    Ok((StatusCode::CREATED, Json(status)))
}

async fn admit(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<AdmitReply>> {
    let session = store.get(&id).await?;
    let req: AdmitRequest = parse(&body)?;
    let mut session = session.lock().await;
    let snapshot = session.admit(&req.events)?;
    tracing::info!(session = %id, burnin = snapshot.burnin_count, "admitted");
    Ok(Json(AdmitReply {
        session_id: id,
        status: "active".into(),
        snapshot,
    }))
}

async fn ingest(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<IngestReply>> {
    let session = store.get(&id).await?;
    let event: EventIn = parse(&body)?;
    let reply = session.lock().await.ingest(&event)?;
    Ok(Json(reply))
}

async fn status(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ServiceResult<Json<StatusReply>> {
    let session = store.get(&id).await?;
    let status = session.lock().await.status();
    Ok(Json(status))
}

async fn report(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ServiceResult<impl IntoResponse> {
    let session = store.get(&id).await?;
    let bytes = session.lock().await.report()?;
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], bytes))
}

async fn reset(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
) -> ServiceResult<Json<StatusReply>> {
    let session = store.get(&id).await?;
    let status = session.lock().await.reset()?;
    tracing::info!(session = %id, "reset");
    Ok(Json(status))
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/admit", post(admit))
        .route("/sessions/{id}/events", post(ingest))
        .route("/sessions/{id}/status", get(status))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/reset", post(reset))
        .with_state(store)
}

/// Serve `store` on an already bound listener until ctrl-c.
pub async fn run(listener: tokio::net::TcpListener, store: Arc<Store>) -> ServiceResult<()> {
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
