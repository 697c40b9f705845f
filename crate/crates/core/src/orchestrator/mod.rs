//! Sessions and the dispatch engine: run the model, parse its structured
//! reply, execute at most one function call and re-run the model on the
//! result.

mod backend;
mod dispatch;
mod persist;
mod remote;
mod session;
mod trace;

pub use backend::{
    default_scripted_reply, BackendCause, BackendError, Conversation, ImageStore, LlmBackend, Script, ScriptEntry,
    ScriptedBackend, PROBE_DEMO_QUERY,
};
pub use dispatch::{execute_call, render_result_turn, DispatchOutcome, ImageInput, Orchestrator, OrchestratorConfig};
pub use remote::{ImageMode, RemoteBackend, RemoteBackendConfig};
pub use session::{Session, SessionSnapshot, SessionStore};
pub use trace::{DispatchError, DispatchTrace, TraceStore, TRACE_SCHEMA_VERSION};

/// Failures outside a dispatch: bad preconditions or storage.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OrchestratorError {
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("unknown image {0:?}")]
    UnknownImage(String),
    #[error("persistence: {0}")]
    Persistence(String),
}
