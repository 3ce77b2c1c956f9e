//! HTTP front end for the router.
//!
//! * `POST /v1/route` with `{"query": {...}}` returns the routing outcome.
//! * `POST /v1/signals` with the same body returns every available signal.
//! * `GET /healthz` reports backend reachability.
//!
//! Each routed request is appended to the request log as an unlabeled
//! evaluation record, so production traffic can be re-read offline.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Json;
use confroute_core::backends::BackendError;
use confroute_core::records::{to_line, McqOption, Query, SignalVector};
use confroute_core::router::{RouteError, RouteOutcome, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{role} backend unreachable: {source}")]
    Unreachable { role: &'static str, source: BackendError },
    #[error("request log {path}: {source}")]
    Log { path: PathBuf, source: std::io::Error },
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// A query as sent by clients; the id is optional.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct QueryIn {
    #[serde(default)]
    pub id: Option<String>,
    pub text: String,
    #[serde(default)]
    pub options: Vec<McqOption>,
    #[serde(default)]
    pub dataset: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RouteRequest {
    pub query: QueryIn,
}

/// Decodes a request body the way the server does.
pub fn parse_route_request(body: &[u8]) -> Result<RouteRequest, String> {
    let req: RouteRequest = serde_json::from_slice(body).map_err(|e| e.to_string())?;
    if req.query.text.trim().is_empty() {
        return Err("query.text must be non-empty".into());
    }
    Ok(req)
}

pub struct AppState {
    router: Arc<Router>,
    log: Option<Mutex<File>>,
    next_id: AtomicU64,
}

impl AppState {
    /// Checks every configured backend and opens the request log. Fails
    /// fast so a misconfigured gateway never starts serving.
    pub fn new(router: Router, log_path: Option<&Path>) -> Result<Self, GatewayError> {
        for (role, result) in health(&router) {
            result.map_err(|source| GatewayError::Unreachable { role, source })?;
        }
        let log = match log_path {
            Some(p) => Some(Mutex::new(
                OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|source| GatewayError::Log { path: p.to_path_buf(), source })?,
            )),
            None => None,
        };
        Ok(Self { router: Arc::new(router), log, next_id: AtomicU64::new(1) })
    }

    fn to_query(&self, q: QueryIn) -> Query {
        let id = q.id.unwrap_or_else(|| format!("req-{:06}", self.next_id.fetch_add(1, Ordering::Relaxed)));
        Query { id, text: q.text, options: q.options, gold: None, dataset: q.dataset, category: String::new() }
    }

    fn log_outcome(&self, q: &Query, outcome: &RouteOutcome) {
        let (Some(log), Some(record)) = (&self.log, outcome.to_log_record(q)) else {
            return;
        };
        match to_line(&record) {
            Ok(line) => {
                let mut f = log.lock().unwrap_or_else(|e| e.into_inner());
                if let Err(e) = writeln!(f, "{line}") {
                    log::error!("request log write failed: {e}");
                }
            }
            Err(e) => log::error!("request `{}` not logged: {e}", q.id),
        }
    }
}

fn health(router: &Router) -> Vec<(&'static str, Result<(), BackendError>)> {
    let s = router.services();
    let mut out = vec![("local", s.local.health())];
    if let Some(c) = &s.cloud {
        out.push(("cloud", c.health()));
    }
    if let Some(e) = &s.embedder {
        out.push(("embedder", e.health()));
    }
    out
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

fn route_error(e: RouteError) -> Response {
    match e {
        RouteError::CloudUnavailable { reason, local_answer, signals } => (
            StatusCode::BAD_GATEWAY,
            Json(json!({
                "error": format!("cloud backend unavailable: {reason}"),
                "local_answer": local_answer,
                "signals": signals,
            })),
        )
            .into_response(),
        RouteError::Policy(m) => error(StatusCode::INTERNAL_SERVER_ERROR, m),
        other => error(StatusCode::BAD_GATEWAY, other.to_string()),
    }
}

#[allow(clippy::result_large_err)] // axum responses are returned by value
fn decode(body: Result<Json<RouteRequest>, JsonRejection>) -> Result<RouteRequest, Response> {
    let Json(req) = body.map_err(|r| error(StatusCode::BAD_REQUEST, r.body_text()))?;
    if req.query.text.trim().is_empty() {
        return Err(error(StatusCode::BAD_REQUEST, "query.text must be non-empty"));
    }
    Ok(req)
}

async fn route(State(state): State<Arc<AppState>>, body: Result<Json<RouteRequest>, JsonRejection>) -> Response {
    let req = match decode(body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let q = state.to_query(req.query);
    let worker = state.clone();
    let joined = tokio::task::spawn_blocking(move || {
        let result = worker.router.route(&q);
        if let Ok(outcome) = &result {
            worker.log_outcome(&q, outcome);
        }
        result
    })
    .await;
    match joined {
        Ok(Ok(outcome)) => Json(outcome).into_response(),
        Ok(Err(e)) => route_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn signals(State(state): State<Arc<AppState>>, body: Result<Json<RouteRequest>, JsonRejection>) -> Response {
    let req = match decode(body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    let q = state.to_query(req.query);
    let worker = state.clone();
    match tokio::task::spawn_blocking(move || worker.router.signals(&q)).await {
        Ok(Ok((v, _))) => Json::<SignalVector>(v).into_response(),
        Ok(Err(e)) => route_error(e),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> Response {
    let worker = state.clone();
    let checks = tokio::task::spawn_blocking(move || health(&worker.router)).await.unwrap_or_default();
    let mut backends = serde_json::Map::new();
    let mut ok = !checks.is_empty();
    for (role, r) in checks {
        let status = match r {
            Ok(()) => "ok".to_string(),
            Err(e) => {
                ok = false;
                e.to_string()
            }
        };
        backends.insert(role.to_string(), status.into());
    }
    let status = if ok { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (status, Json(json!({ "status": if ok { "ok" } else { "degraded" }, "backends": backends }))).into_response()
}

pub fn app(state: Arc<AppState>) -> axum::Router {
    axum::Router::new()
        .route("/v1/route", post(route))
        .route("/v1/signals", post(signals))
        .route("/healthz", get(healthz))
        .with_state(state)
}

/// Serves until Ctrl-C.
pub fn serve(state: AppState, addr: SocketAddr) -> Result<(), GatewayError> {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app(Arc::new(state)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
