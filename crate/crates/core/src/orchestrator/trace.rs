use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::backend::BackendError;
use super::persist::write_new;
use super::OrchestratorError;
use crate::functions::{FunctionError, FunctionResult};
use crate::protocol::{FunctionCall, ParseError, StructuredReply};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Typed failure of one dispatch. Each comes with an apology reply.
#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum DispatchError {
    #[error("{error}")]
    BackendUnavailable { round: u8, error: BackendError },
    #[error("round {round} reply did not parse: {error}")]
    ParseFailed { round: u8, error: ParseError },
    #[error("unknown function {api_name:?}")]
    UnknownFunction { api_name: String },
    #[error("{api_name}: parameter {param:?}: {reason}")]
    ParamValidation {
        api_name: String,
        param: String,
        reason: String,
    },
    #[error("{api_name} failed: {error}")]
    FunctionFailed { api_name: String, error: FunctionError },
}

impl DispatchError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::BackendUnavailable { .. } => "backend_unavailable",
            Self::ParseFailed { .. } => "parse_failed",
            Self::UnknownFunction { .. } => "unknown_function",
            Self::ParamValidation { .. } => "param_validation",
            Self::FunctionFailed { .. } => "function_failed",
        }
    }

    /// User-facing reply sent instead of a model answer.
    pub fn apology(&self) -> String {
        match self {
            Self::BackendUnavailable { .. } => {
                "Sorry, the assistant model is unavailable right now. Please try again.".into()
            }
            Self::ParseFailed { .. } => {
                "Sorry, I could not interpret the model output. Please rephrase the question.".into()
            }
            Self::UnknownFunction { api_name } => {
                format!("Sorry, I tried to use a function that is not available ({api_name}).")
            }
            Self::ParamValidation { api_name, param, .. } => {
                format!("Sorry, the {api_name} function needs a valid {param} parameter.")
            }
            Self::FunctionFailed { api_name, .. } => {
                format!("Sorry, the {api_name} function failed, so I cannot answer that reliably.")
            }
        }
    }
}

/// Everything that happened while answering one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchTrace {
    pub schema_version: u32,
    pub trace_id: String,
    pub session_id: String,
    pub query: String,
    pub image_ref: Option<String>,
    /// Raw backend text of round one, when the backend answered.
    pub first_raw: Option<String>,
    pub first_reply: Option<StructuredReply>,
    pub executed_call: Option<FunctionCall>,
    pub function_result: Option<FunctionResult>,
    pub second_raw: Option<String>,
    pub second_reply: Option<StructuredReply>,
    pub rounds: u8,
    pub final_reply: String,
    pub error: Option<DispatchError>,
}

impl DispatchTrace {
    /// The call the model asked for in round one, executed or not.
    pub fn requested_call(&self) -> Option<&FunctionCall> {
        self.first_reply.as_ref().and_then(|r| r.calling.as_ref())
    }

    /// Structural invariants between rounds, calls and errors.
    pub fn check(&self) -> Result<(), String> {
        if !matches!(self.rounds, 1 | 2) {
            return Err(format!("rounds = {}", self.rounds));
        }
        if (self.rounds == 2) != self.executed_call.is_some() {
            return Err("rounds = 2 must coincide with an executed call".into());
        }
        if self.executed_call.is_some() != self.function_result.is_some() {
            return Err("an executed call must have a result".into());
        }
        if self.executed_call.is_some() && self.executed_call.as_ref() != self.requested_call() {
            return Err("executed call differs from the requested one".into());
        }
        if self.error.is_none() && self.requested_call().is_some() != self.executed_call.is_some() {
            return Err("a requested call without an error must be executed".into());
        }
        if self.final_reply.trim().is_empty() {
            return Err("final reply is empty".into());
        }
        Ok(())
    }
}

/// Append-only trace storage; with a directory each trace becomes
/// `<trace_id>.json`, created atomically and never rewritten.
#[derive(Debug, Default)]
pub struct TraceStore {
    traces: RwLock<BTreeMap<String, DispatchTrace>>,
    dir: Option<PathBuf>,
}

impl TraceStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(dir: impl AsRef<Path>) -> Result<Self, OrchestratorError> {
        let dir = dir.as_ref().to_path_buf();
        let io = |e: std::io::Error| OrchestratorError::Persistence(format!("{}: {e}", dir.display()));
        fs::create_dir_all(&dir).map_err(io)?;
        let mut traces = BTreeMap::new();
        for entry in fs::read_dir(&dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(io)?;
            let trace: DispatchTrace = serde_json::from_str(&text)
                .map_err(|e| OrchestratorError::Persistence(format!("{}: {e}", path.display())))?;
            traces.insert(trace.trace_id.clone(), trace);
        }
        Ok(Self {
            traces: RwLock::new(traces),
            dir: Some(dir),
        })
    }

    pub fn append(&self, trace: DispatchTrace) -> Result<(), OrchestratorError> {
        let mut traces = self.traces.write().expect("trace lock");
        if traces.contains_key(&trace.trace_id) {
            return Err(OrchestratorError::Persistence(format!(
                "trace {} already exists",
                trace.trace_id
            )));
        }
        if let Some(dir) = &self.dir {
            let json = serde_json::to_vec_pretty(&trace).expect("traces serialize");
            write_new(&dir.join(format!("{}.json", trace.trace_id)), &json)
                .map_err(|e| OrchestratorError::Persistence(format!("trace {}: {e}", trace.trace_id)))?;
        }
        traces.insert(trace.trace_id.clone(), trace);
        Ok(())
    }

    pub fn get(&self, trace_id: &str) -> Option<DispatchTrace> {
        self.traces.read().expect("trace lock").get(trace_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.traces.read().expect("trace lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn for_session(&self, session_id: &str) -> Vec<DispatchTrace> {
        self.traces
            .read()
            .expect("trace lock")
            .values()
            .filter(|t| t.session_id == session_id)
            .cloned()
            .collect()
    }
}
