//! HTTP front end.
//!
//! | method | path           | body                                   |
//! |--------|----------------|----------------------------------------|
//! | POST   | `/v1/complete` | `{"id"?, "prompt"}` or `{"id"?, "messages": [...]}` |
//! | POST   | `/v1/feedback` | `{"id", "valid"}`                      |
//! | GET    | `/v1/metrics`  |                                        |
//! | GET    | `/v1/clusters` |                                        |

use std::future::Future;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gencache_core::codegen::{ChatMessage, LlmBackend, LlmError, RemoteLlm, Role};
use gencache_core::embeddings::Embedder;
use gencache_core::prompt::{new_request_id, PromptRecord};
use gencache_core::runtime::{
    ClusterSummary, MetricsSnapshot, RequestOutcome, Runtime, RuntimeError, ServedFrom, Timings,
    TokenAccount,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;

use crate::config::ServiceConfig;

#[derive(Clone)]
pub struct AppState {
    pub runtime: Arc<Runtime>,
    /// Answers misses.
    pub backend: Arc<dyn LlmBackend>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CompleteRequest {
    id: Option<String>,
    prompt: Option<String>,
    messages: Option<Vec<ChatMessage>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CompleteResponse {
    pub id: String,
    pub response: String,
    pub served_from: ServedFrom,
    pub cluster_id: Option<u64>,
    pub timings: Timings,
    pub tokens: TokenAccount,
}

impl From<RequestOutcome> for CompleteResponse {
    fn from(o: RequestOutcome) -> Self {
        Self {
            id: o.request_id,
            response: o.response_text,
            served_from: o.served_from,
            cluster_id: o.cluster_id,
            timings: o.timings,
            tokens: o.tokens,
        }
    }
}

#[derive(Debug, Deserialize)]
struct FeedbackRequest {
    id: String,
    valid: bool,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<RuntimeError> for ApiError {
    fn from(e: RuntimeError) -> Self {
        let status = match e {
            RuntimeError::Backend(_) => StatusCode::BAD_GATEWAY,
            RuntimeError::UnknownRequest(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

fn join_failed(e: tokio::task::JoinError) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}"))
}

/// Builds the prompt record for a request body; chat messages are joined
/// with newlines in order.
fn prompt_of(req: CompleteRequest) -> Result<(PromptRecord, Option<Vec<ChatMessage>>), ApiError> {
    let id = req.id.unwrap_or_else(new_request_id);
    if id.is_empty() {
        return Err(ApiError::bad_request("id must not be empty"));
    }
    match (req.prompt, req.messages) {
        (Some(prompt), None) => Ok((PromptRecord::with_parts(id, prompt.clone(), prompt), None)),
        (None, Some(messages)) if !messages.is_empty() => {
            let full = messages
                .iter()
                .map(|m| m.content.as_str())
                .collect::<Vec<_>>()
                .join("\n");
            let user = messages
                .iter()
                .rev()
                .find(|m| m.role == Role::User)
                .map(|m| m.content.clone())
                .unwrap_or_else(|| full.clone());
            Ok((PromptRecord::with_parts(id, full, user), Some(messages)))
        }
        (None, Some(_)) => Err(ApiError::bad_request("messages must not be empty")),
        _ => Err(ApiError::bad_request("expected exactly one of prompt or messages")),
    }
}

async fn complete(State(app): State<AppState>, body: Bytes) -> Result<Json<CompleteResponse>, ApiError> {
    let req: CompleteRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    let (prompt, messages) = prompt_of(req)?;
    let outcome = tokio::task::spawn_blocking(move || {
        app.runtime
            .handle_chat(prompt, messages.as_deref(), app.backend.as_ref())
    })
    .await
    .map_err(join_failed)?;
    match outcome {
        Ok(o) => {
            tracing::debug!(id = %o.request_id, served_from = ?o.served_from, "request served");
            Ok(Json(o.into()))
        }
        Err(e) => {
            tracing::warn!(error = %e, "request failed");
            Err(e.into())
        }
    }
}

async fn feedback(State(app): State<AppState>, body: Bytes) -> Result<Json<serde_json::Value>, ApiError> {
    let req: FeedbackRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))?;
    let applied = tokio::task::spawn_blocking(move || app.runtime.record_feedback(&req.id, req.valid))
        .await
        .map_err(join_failed)??;
    Ok(Json(json!({ "applied": applied })))
}

async fn metrics(State(app): State<AppState>) -> Json<MetricsSnapshot> {
    Json(app.runtime.metrics())
}

async fn clusters(State(app): State<AppState>) -> Json<Vec<ClusterSummary>> {
    Json(app.runtime.clusters())
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/feedback", post(feedback))
        .route("/v1/metrics", get(metrics))
        .route("/v1/clusters", get(clusters))
        .with_state(state)
}

fn remote(cfg: &ServiceConfig, model: Option<&String>) -> Result<Arc<dyn LlmBackend>> {
    let model = model.or(cfg.backend_model.as_ref()).cloned();
    let llm = RemoteLlm::new(
        &cfg.backend_endpoint,
        model,
        Duration::from_millis(cfg.backend_timeout_ms),
    )?;
    Ok(Arc::new(llm))
}

/// Backend for offline tools: every call fails.
pub struct Offline;

impl LlmBackend for Offline {
    fn complete(&self, _: &[ChatMessage]) -> Result<gencache_core::codegen::Completion, LlmError> {
        Err(LlmError::Transport("no backend in offline mode".into()))
    }
}

pub fn embedder(cfg: &ServiceConfig) -> Result<Arc<dyn Embedder>> {
    Ok(Arc::from(cfg.embedder.build()?))
}

/// Runtime wired to the configured remote backend.
pub fn build_state(cfg: &ServiceConfig) -> Result<AppState> {
    let runtime = Runtime::new(
        cfg.runtime_config(),
        embedder(cfg)?,
        remote(cfg, cfg.codegen_model.as_ref())?,
        remote(cfg, cfg.validator_model.as_ref())?,
    );
    Ok(AppState {
        runtime: Arc::new(runtime),
        backend: remote(cfg, None)?,
    })
}

/// Runtime that can load, inspect and write state but never calls a model.
pub fn offline_runtime(cfg: &ServiceConfig) -> Result<Runtime> {
    Ok(Runtime::new(
        cfg.runtime_config(),
        embedder(cfg)?,
        Arc::new(Offline),
        Arc::new(Offline),
    ))
}

pub fn has_state(dir: &Path) -> bool {
    dir.join("clusters.jsonl").is_file()
}

/// Serves until `shutdown` resolves, then lets queued synthesis finish and
/// persists state to `data_dir` when one is given.
pub async fn serve_with(
    listener: TcpListener,
    state: AppState,
    data_dir: Option<PathBuf>,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<()> {
    let runtime = Arc::clone(&state.runtime);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .context("http server")?;
    tracing::info!("draining synthesis jobs");
    tokio::task::spawn_blocking(move || -> Result<()> {
        runtime.wait_idle();
        if let Some(dir) = data_dir {
            runtime
                .snapshot(&dir)
                .with_context(|| format!("writing state to {}", dir.display()))?;
            tracing::info!(dir = %dir.display(), "state saved");
        }
        runtime.shutdown();
        Ok(())
    })
    .await?
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub async fn serve(cfg: ServiceConfig) -> Result<()> {
    let state = build_state(&cfg)?;
    if has_state(&cfg.data_dir) {
        let rt = Arc::clone(&state.runtime);
        let dir = cfg.data_dir.clone();
        tokio::task::spawn_blocking(move || rt.restore(&dir))
            .await?
            .with_context(|| format!("loading state from {}", cfg.data_dir.display()))?;
        tracing::info!(clusters = state.runtime.cluster_count(), "state restored");
    }
    let listener = TcpListener::bind(&cfg.listen)
        .await
        .with_context(|| format!("binding {}", cfg.listen))?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    serve_with(listener, state, Some(cfg.data_dir.clone()), shutdown_signal()).await
}
