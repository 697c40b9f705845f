//! `/v1` HTTP API.
//!
//! | Method | Path | Body | Response |
//! |---|---|---|---|
//! | GET | `/v1/health` | | version, backend, registered functions |
//! | GET | `/v1/functions` | | function specs |
//! | POST | `/v1/sessions` | | `{session_id}` (201) |
//! | POST | `/v1/sessions/{id}/chat` | `{message, image_base64?, image_ref?}` | `{reply, trace_id, rounds, image_ref, error}` |
//! | GET | `/v1/sessions/{id}` | | session snapshot |
//! | GET | `/v1/traces/{id}` | | dispatch trace |
//! | POST | `/v1/eval` | `{cases_path}` or `{cases}` | evaluation report |
//!
//! Errors are `{code, message, detail}` with a 4xx or 5xx status.

use std::future::Future;
use std::net::SocketAddr;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use surgassist_core::eval::{run_eval, EvalCase, EvalError};
use surgassist_core::orchestrator::{ImageInput, OrchestratorError};
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::app::{read_cases, App};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
            detail: Value::Null,
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.detail = detail;
        self
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_request", message).with_detail(json!({ "field": field }))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        match &e {
            OrchestratorError::UnknownSession(id) => {
                Self::new(StatusCode::NOT_FOUND, "unknown_session", e.to_string()).with_detail(json!({ "session_id": id }))
            }
            OrchestratorError::UnknownImage(r) => {
                Self::new(StatusCode::BAD_REQUEST, "unknown_image", e.to_string()).with_detail(json!({ "image_ref": r }))
            }
            OrchestratorError::Persistence(_) => Self::new(StatusCode::INTERNAL_SERVER_ERROR, "persistence", e.to_string()),
        }
    }
}

/// Parses a JSON body, reporting the offending field and position.
fn parse_body<T: DeserializeOwned>(body: Result<Bytes, BytesRejection>) -> Result<T, ApiError> {
    let bytes = body.map_err(|r| {
        let status = r.status();
        let code = if status == StatusCode::PAYLOAD_TOO_LARGE { "body_too_large" } else { "invalid_request" };
        ApiError::new(status, code, r.body_text())
    })?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", format!("malformed request body: {inner}")).with_detail(
            json!({ "field": if field == "." { Value::Null } else { json!(field) }, "line": inner.line(), "column": inner.column() }),
        )
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChatRequest {
    pub message: String,
    #[serde(default)]
    pub image_base64: Option<String>,
    /// A fixture `image_ref` or the content id of an image sent earlier.
    #[serde(default)]
    pub image_ref: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub reply: String,
    pub trace_id: String,
    pub rounds: u8,
    pub image_ref: Option<String>,
    /// Code of the dispatch error, if the reply is a fallback.
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRequest {
    #[serde(default)]
    pub cases_path: Option<PathBuf>,
    #[serde(default)]
    pub cases: Option<Vec<EvalCase>>,
    #[serde(default)]
    pub label: Option<String>,
}

async fn health(State(app): State<App>) -> Json<Value> {
    let names: Vec<String> = app.orchestrator.registry().list().iter().map(|s| s.api_name.clone()).collect();
    Json(json!({
        "status": "ok",
        "version": env!("CARGO_PKG_VERSION"),
        "backend": app.backend_label,
        "functions": { "count": names.len(), "names": names },
    }))
}

async fn functions(State(app): State<App>) -> Json<Value> {
    Json(json!(app.orchestrator.registry().specs()))
}

async fn create_session(State(app): State<App>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let id = app.orchestrator.create_session()?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn chat(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Result<Bytes, BytesRejection>,
) -> Result<Json<ChatResponse>, ApiError> {
    let req: ChatRequest = parse_body(body)?;
    if req.message.trim().is_empty() {
        return Err(ApiError::invalid("message", "message must not be empty"));
    }
    let image = match (req.image_base64, req.image_ref) {
        (Some(_), Some(_)) => {
            return Err(ApiError::invalid("image_base64", "send either image_base64 or image_ref, not both"))
        }
        (Some(b64), None) => {
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| ApiError::invalid("image_base64", format!("invalid base64: {e}")))?;
            if bytes.len() > app.max_image_bytes {
                return Err(ApiError::new(
                    StatusCode::PAYLOAD_TOO_LARGE,
                    "image_too_large",
                    format!("image is {} bytes; the limit is {}", bytes.len(), app.max_image_bytes),
                )
                .with_detail(json!({ "field": "image_base64", "limit": app.max_image_bytes })));
            }
            Some(ImageInput::Bytes(bytes))
        }
        (None, Some(r)) => Some(ImageInput::Ref(r)),
        (None, None) => None,
    };
    let out = app.orchestrator.handle_query(&id, &req.message, image).await?;
    Ok(Json(ChatResponse {
        reply: out.final_reply,
        trace_id: out.trace.trace_id,
        rounds: out.trace.rounds,
        image_ref: out.trace.image_ref,
        error: out.trace.error.map(|e| e.code().to_string()),
    }))
}

async fn get_session(State(app): State<App>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let snap = app.orchestrator.sessions().snapshot(&id).await?;
    Ok(Json(json!(snap)))
}

async fn get_trace(State(app): State<App>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    match app.orchestrator.traces().get(&id) {
        Some(t) => Ok(Json(json!(t))),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_trace", format!("unknown trace {id:?}"))
            .with_detail(json!({ "trace_id": id }))),
    }
}

async fn eval(State(app): State<App>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let req: EvalRequest = parse_body(body)?;
    let cases = match (req.cases_path, req.cases) {
        (Some(p), None) => read_cases(&p)
            .map_err(|e| ApiError::invalid("cases_path", e.message))?
            .cases(),
        (None, Some(c)) => c,
        _ => return Err(ApiError::invalid("cases", "send exactly one of cases_path and cases")),
    };
    let label = req.label.unwrap_or_else(|| app.backend_label.clone());
    let report = run_eval(&app.orchestrator, &cases, &app.lexicon, &label).await.map_err(|e| {
        let status = match e {
            EvalError::EmptyCases | EvalError::InvalidCase { .. } | EvalError::UnresolvableImage { .. } => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, "eval_failed", e.to_string())
    })?;
    Ok(([("content-type", "application/json")], report.to_json()).into_response())
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(app: App) -> Router {
    // Base64 inflates by 4/3; leave room for the rest of the body.
    let body_limit = app.max_image_bytes / 3 * 4 + 64 * 1024;
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/functions", get(functions))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/chat", post(chat))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/traces/{id}", get(get_trace))
        .route("/v1/eval", post(eval))
        .fallback(not_found)
        .layer(DefaultBodyLimit::max(body_limit))
        .with_state(app)
}

/// A service bound to a port and running in the background.
pub struct RunningService {
    pub addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    handle: JoinHandle<std::io::Result<()>>,
}

impl RunningService {
    /// Binds `listen` and starts serving. Fails fast when the port is taken.
    pub async fn start(app: App, listen: &str) -> Result<Self, CliError> {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| CliError::runtime(format!("cannot listen on {listen}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| CliError::runtime(e.to_string()))?;
        let (tx, rx) = oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            axum::serve(listener, router(app))
                .with_graceful_shutdown(async {
                    let _ = rx.await;
                })
                .await
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            handle,
        })
    }

    /// Stops accepting connections and waits for in-flight requests.
    pub async fn stop(mut self) -> Result<(), CliError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.wait().await
    }

    async fn wait(self) -> Result<(), CliError> {
        match self.handle.await {
            Ok(Ok(())) => Ok(()),
            Ok(Err(e)) => Err(CliError::runtime(e.to_string())),
            Err(e) => Err(CliError::runtime(e.to_string())),
        }
    }

    /// Serves until `signal` resolves, then shuts down gracefully.
    pub async fn run_until(self, signal: impl Future<Output = ()>) -> Result<(), CliError> {
        signal.await;
        self.stop().await
    }
}
