use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{BackendCause, BackendError, Conversation, ImageStore, LlmBackend};
use super::session::{Session, SessionStore};
use super::trace::{DispatchError, DispatchTrace, TraceStore, TRACE_SCHEMA_VERSION};
use super::OrchestratorError;
use crate::functions::{content_id, FailureCause, FixtureBundle, FunctionError, FunctionRequest, FunctionResult, Registry};
use crate::protocol::{parse_structured, FunctionCall, Role, Turn};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrchestratorConfig {
    #[serde(with = "crate::duration_ms")]
    pub backend_timeout: Duration,
    #[serde(with = "crate::duration_ms")]
    pub function_timeout: Duration,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            backend_timeout: crate::DEFAULT_BACKEND_TIMEOUT,
            function_timeout: crate::DEFAULT_FUNCTION_TIMEOUT,
        }
    }
}

/// Image attached to a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageInput {
    /// A content id already in the session, or a fixture `image_ref`.
    Ref(String),
    /// New image bytes; stored in the session under their content id.
    Bytes(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchOutcome {
    pub final_reply: String,
    pub trace: DispatchTrace,
}

/// Renders a function result as the function-role turn fed back to the model.
pub fn render_result_turn(result: FunctionResult) -> Turn {
    Turn::function(result)
}

/// Looks up `call.api_name`, checks its parameters against its `FunctionSpec` and runs
/// it with a timeout.
pub async fn execute_call(
    call: &FunctionCall,
    registry: &Registry,
    request: FunctionRequest,
    timeout: Duration,
) -> Result<FunctionResult, DispatchError> {
    let api_name = call.api_name.clone();
    let spec = registry.spec(&api_name).ok_or_else(|| DispatchError::UnknownFunction {
        api_name: api_name.clone(),
    })?;
    let param_error = |param: &str, reason: &str| DispatchError::ParamValidation {
        api_name: api_name.clone(),
        param: param.to_string(),
        reason: reason.to_string(),
    };
    for (param, _) in &spec.required_params {
        match call.api_params.get(param) {
            None => return Err(param_error(param, "missing required parameter")),
            Some(v) if v.trim().is_empty() => return Err(param_error(param, "must not be empty")),
            Some(_) => {}
        }
    }
    if let Some(extra) = call
        .api_params
        .keys()
        .find(|k| !spec.required_params.iter().any(|(p, _)| p == *k))
    {
        return Err(param_error(extra, "not a parameter of this function"));
    }
    let function = registry.lookup(&api_name).map_err(|_| DispatchError::UnknownFunction {
        api_name: api_name.clone(),
    })?;
    let request = FunctionRequest {
        params: call.api_params.clone(),
        ..request
    };
    let failed = |error: FunctionError| match error {
        FunctionError::ParamValidation { param, reason } => DispatchError::ParamValidation {
            api_name: api_name.clone(),
            param,
            reason,
        },
        error => DispatchError::FunctionFailed {
            api_name: api_name.clone(),
            error,
        },
    };
    let result = match tokio::time::timeout(timeout, function.call(&request)).await {
        Err(_) => {
            return Err(failed(FunctionError::failed(
                FailureCause::Timeout,
                format!("no result within {} ms", timeout.as_millis()),
            )))
        }
        Ok(r) => r.map_err(failed)?,
    };
    if result.kind() != spec.output_kind {
        return Err(failed(FunctionError::failed(
            FailureCause::Validation,
            format!("expected {:?} output, got {:?}", spec.output_kind, result.kind()),
        )));
    }
    result
        .validate()
        .map_err(|e| failed(FunctionError::failed(FailureCause::Validation, e.to_string())))?;
    Ok(result)
}

/// The dispatch engine: one backend round, and a second one after at most
/// one function call.
pub struct Orchestrator {
    backend: Arc<dyn LlmBackend>,
    registry: Arc<Registry>,
    fixtures: Option<Arc<FixtureBundle>>,
    sessions: SessionStore,
    traces: TraceStore,
    config: OrchestratorConfig,
}

impl Orchestrator {
    pub fn new(backend: Arc<dyn LlmBackend>, registry: Arc<Registry>) -> Self {
        Self {
            backend,
            registry,
            fixtures: None,
            sessions: SessionStore::in_memory(),
            traces: TraceStore::in_memory(),
            config: OrchestratorConfig::default(),
        }
    }

    pub fn with_fixtures(mut self, bundle: Arc<FixtureBundle>) -> Self {
        self.fixtures = Some(bundle);
        self
    }

    pub fn with_config(mut self, config: OrchestratorConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_sessions(mut self, sessions: SessionStore) -> Self {
        self.sessions = sessions;
        self
    }

    pub fn with_traces(mut self, traces: TraceStore) -> Self {
        self.traces = traces;
        self
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    pub fn traces(&self) -> &TraceStore {
        &self.traces
    }

    pub fn config(&self) -> OrchestratorConfig {
        self.config
    }

    /// True when `image_ref` names a fixture scene, so a fresh session can
    /// use it.
    pub fn resolves_image(&self, image_ref: &str) -> bool {
        self.fixtures.as_ref().is_some_and(|b| b.contains(image_ref))
    }

    pub fn create_session(&self) -> Result<String, OrchestratorError> {
        self.sessions.create()
    }

    fn resolve_image(&self, session: &mut Session, image: ImageInput) -> Result<String, OrchestratorError> {
        match image {
            ImageInput::Bytes(bytes) => {
                let id = content_id(&bytes);
                session.image_store.entry(id.clone()).or_insert_with(|| bytes.into());
                Ok(id)
            }
            ImageInput::Ref(r) => {
                let known = session.image_store.contains_key(&r)
                    || self.fixtures.as_ref().is_some_and(|b| b.contains(&r));
                if known {
                    Ok(r)
                } else {
                    Err(OrchestratorError::UnknownImage(r))
                }
            }
        }
    }

    fn image_bytes(&self, images: &ImageStore, image_ref: &str) -> Option<Arc<[u8]>> {
        images.get(image_ref).cloned().or_else(|| {
            self.fixtures
                .as_ref()
                .and_then(|b| b.image_bytes(image_ref))
                .map(Arc::from)
        })
    }

    async fn generate(&self, session: &Session, round: u8) -> Result<String, DispatchError> {
        let conversation = Conversation {
            turns: session.turns(),
            images: &session.image_store,
        };
        match tokio::time::timeout(self.config.backend_timeout, self.backend.generate(conversation)).await {
            Ok(Ok(text)) => Ok(text),
            Ok(Err(error)) => Err(DispatchError::BackendUnavailable { round, error }),
            Err(_) => Err(DispatchError::BackendUnavailable {
                round,
                error: BackendError {
                    cause: BackendCause::Timeout,
                    detail: format!("no reply within {} ms", self.config.backend_timeout.as_millis()),
                    attempts: 1,
                },
            }),
        }
    }

    /// Answers `query` in `session`. Dispatch failures never surface as
    /// `Err`: they end in an apology reply with the typed error in the trace.
    /// `Err` is reserved for an unknown session or image and for storage
    /// failures.
    pub async fn handle_query(
        &self,
        session_id: &str,
        query: &str,
        image: Option<ImageInput>,
    ) -> Result<DispatchOutcome, OrchestratorError> {
        let handle = self.sessions.get(session_id)?;
        let mut session = handle.lock().await;
        let image_ref = match image {
            Some(img) => Some(self.resolve_image(&mut session, img)?),
            None => None,
        };
        session.push(Turn::user(query, image_ref.clone()));
        let n = session.turns().iter().filter(|t| t.role == Role::User).count();
        let trace_id = format!("{session_id}-{n:04}");
        let mut trace = DispatchTrace {
            schema_version: TRACE_SCHEMA_VERSION,
            trace_id: trace_id.clone(),
            session_id: session_id.to_string(),
            query: query.to_string(),
            image_ref: image_ref.clone(),
            first_raw: None,
            first_reply: None,
            executed_call: None,
            function_result: None,
            second_raw: None,
            second_reply: None,
            rounds: 1,
            final_reply: String::new(),
            error: None,
        };

        let final_turn = self.dispatch(&mut session, &mut trace).await;
        let mut final_turn = final_turn;
        final_turn.trace_id = Some(trace_id);
        trace.final_reply = final_turn.content.clone();
        session.push(final_turn);
        if let Some(e) = &trace.error {
            tracing::info!(trace = %trace.trace_id, code = e.code(), "dispatch ended with an error");
        }

        self.sessions.persist(&session)?;
        self.traces.append(trace.clone())?;
        Ok(DispatchOutcome {
            final_reply: trace.final_reply.clone(),
            trace,
        })
    }

    /// Runs the rounds, appending intermediate turns; returns the final
    /// assistant turn.
    async fn dispatch(&self, session: &mut Session, trace: &mut DispatchTrace) -> Turn {
        let fail = |trace: &mut DispatchTrace, error: DispatchError| {
            let turn = Turn::assistant(error.apology());
            trace.error = Some(error);
            turn
        };

        let raw = match self.generate(session, 1).await {
            Ok(raw) => raw,
            Err(e) => return fail(trace, e),
        };
        trace.first_raw = Some(raw.clone());
        let first = match parse_structured(&raw) {
            Ok(r) => r,
            Err(error) => return fail(trace, DispatchError::ParseFailed { round: 1, error }),
        };
        trace.first_reply = Some(first.clone());
        let Some(call) = first.calling.clone() else {
            return Turn::assistant_reply(first);
        };

        let image_ref = trace.image_ref.clone().or_else(|| {
            Conversation {
                turns: session.turns(),
                images: &session.image_store,
            }
            .current_image()
            .map(str::to_string)
        });
        let request = FunctionRequest {
            image: image_ref.as_deref().and_then(|r| self.image_bytes(&session.image_store, r)),
            image_ref: image_ref.unwrap_or_default(),
            params: Default::default(),
        };
        let result = match execute_call(&call, &self.registry, request, self.config.function_timeout).await {
            Ok(r) => r,
            Err(e) => {
                session.push(Turn::assistant_reply(first));
                return fail(trace, e);
            }
        };
        trace.executed_call = Some(call);
        trace.function_result = Some(result.clone());
        trace.rounds = 2;
        session.push(Turn::assistant_reply(first));
        session.push(render_result_turn(result));

        let raw = match self.generate(session, 2).await {
            Ok(raw) => raw,
            Err(e) => return fail(trace, e),
        };
        trace.second_raw = Some(raw.clone());
        match parse_structured(&raw) {
            Ok(second) => {
                trace.second_reply = Some(second.clone());
                Turn::assistant_reply(second)
            }
            Err(error) => {
                let e = DispatchError::ParseFailed { round: 2, error };
                if raw.trim().is_empty() {
                    return fail(trace, e);
                }
                trace.error = Some(e);
                Turn::assistant(raw.trim())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functions::{default_registry, BoundingBox};
    use crate::orchestrator::ScriptedBackend;
    use crate::protocol::{render_structured, StructuredReply};
    use async_trait::async_trait;

    const QUERY: &str = "Where is the navigation probe?";

    fn fig2_backend() -> ScriptedBackend {
        ScriptedBackend::default()
            .with(
                QUERY,
                false,
                &StructuredReply::new(
                    "The surgeon wants the probe location; detection localizes it.",
                    Some(FunctionCall::new("detect").param("target", "navigation probe")),
                    "Running detection.",
                ),
            )
            .with(
                QUERY,
                true,
                &StructuredReply::new(
                    "The detection result gives one box.",
                    None,
                    "The navigation probe is at [0.18, 0.41, 0.45, 0.99].",
                ),
            )
            .with(
                "What procedure is this?",
                false,
                &StructuredReply::new("No function needed.", None, "the scene shows a transsphenoidal approach"),
            )
    }

    fn orchestrator(backend: impl LlmBackend + 'static) -> Orchestrator {
        let bundle = Arc::new(FixtureBundle::synthetic(0, 2));
        Orchestrator::new(Arc::new(backend), Arc::new(default_registry(Arc::clone(&bundle)))).with_fixtures(bundle)
    }

    fn probe() -> Option<ImageInput> {
        Some(ImageInput::Ref("probe_scene".into()))
    }

    #[tokio::test]
    async fn no_call_branch() {
        let o = orchestrator(fig2_backend());
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "What procedure is this?", probe()).await.unwrap();
        assert_eq!(out.trace.rounds, 1);
        assert_eq!(out.final_reply, "the scene shows a transsphenoidal approach");
        assert!(out.trace.check().is_ok());
    }

    #[tokio::test]
    async fn detection_branch_reproduces_figure() {
        let o = orchestrator(fig2_backend());
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, QUERY, probe()).await.unwrap();
        let t = &out.trace;
        assert_eq!(t.rounds, 2);
        assert_eq!(t.executed_call.as_ref().unwrap().api_name, "detect");
        let Some(FunctionResult::Detections { detections }) = &t.function_result else {
            panic!("no detections")
        };
        assert_eq!(detections[0].bbox, BoundingBox::new(0.18, 0.41, 0.45, 0.99).unwrap());
        assert!(out.final_reply.contains("[0.18, 0.41, 0.45, 0.99]"));
        let roles: Vec<_> = o.sessions().snapshot(&s).await.unwrap().turns.iter().map(|t| t.role).collect();
        assert_eq!(roles, [Role::User, Role::Assistant, Role::Function, Role::Assistant]);
        assert_eq!(o.traces().get(&t.trace_id).unwrap(), out.trace);
    }

    #[tokio::test]
    async fn unknown_function_falls_back() {
        let backend = ScriptedBackend::default().with(
            "q",
            false,
            &StructuredReply::new("t", Some(FunctionCall::new("teleport")), "calling"),
        );
        let o = orchestrator(backend);
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "q", probe()).await.unwrap();
        assert!(matches!(out.trace.error, Some(DispatchError::UnknownFunction { .. })));
        assert_eq!(out.trace.rounds, 1);
        assert!(out.final_reply.starts_with("Sorry"));
        assert!(out.trace.check().is_ok());
        let snap = o.sessions().snapshot(&s).await.unwrap();
        assert_eq!(snap.turns.first().unwrap().role, Role::User);
        assert_eq!(snap.turns.last().unwrap().role, Role::Assistant);
    }

    #[tokio::test]
    async fn missing_parameter_is_named() {
        let backend = ScriptedBackend::default().with(
            "q",
            false,
            &StructuredReply::new("t", Some(FunctionCall::new("segment")), "calling"),
        );
        let o = orchestrator(backend);
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "q", probe()).await.unwrap();
        match out.trace.error {
            Some(DispatchError::ParamValidation { param, .. }) => assert_eq!(param, "target"),
            e => panic!("{e:?}"),
        }
    }

    #[tokio::test]
    async fn second_round_calls_are_ignored() {
        let call = StructuredReply::new("t", Some(FunctionCall::new("analyze_scene")), "calling");
        let backend = ScriptedBackend::default().with("q", false, &call).with("q", true, &call);
        let o = orchestrator(backend);
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "q", probe()).await.unwrap();
        assert_eq!(out.trace.rounds, 2);
        assert_eq!(out.final_reply, "calling");
        assert!(out.trace.error.is_none());
    }

    #[tokio::test]
    async fn unparsable_second_reply_is_returned_raw() {
        let call = StructuredReply::new("t", Some(FunctionCall::new("analyze_scene")), "calling");
        let mut backend = ScriptedBackend::default().with("q", false, &call);
        backend.insert(crate::orchestrator::ScriptEntry {
            query: "q".into(),
            image_ref: None,
            after_function: true,
            reply: "plain text answer".into(),
        });
        let o = orchestrator(backend);
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "q", probe()).await.unwrap();
        assert_eq!(out.final_reply, "plain text answer");
        assert!(matches!(out.trace.error, Some(DispatchError::ParseFailed { round: 2, .. })));
    }

    #[tokio::test]
    async fn malformed_first_reply() {
        let mut backend = ScriptedBackend::default();
        backend.insert(crate::orchestrator::ScriptEntry {
            query: "q".into(),
            image_ref: None,
            after_function: false,
            reply: "<reply>unterminated".into(),
        });
        let o = orchestrator(backend);
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "q", None).await.unwrap();
        assert!(matches!(out.trace.error, Some(DispatchError::ParseFailed { round: 1, .. })));
    }

    struct Slow;

    #[async_trait]
    impl LlmBackend for Slow {
        async fn generate(&self, _: Conversation<'_>) -> Result<String, BackendError> {
            tokio::time::sleep(Duration::from_secs(5)).await;
            Ok(render_structured(&StructuredReply::new("", None, "late")))
        }
    }

    #[tokio::test]
    async fn backend_timeout() {
        let o = orchestrator(Slow).with_config(OrchestratorConfig {
            backend_timeout: Duration::from_millis(20),
            ..OrchestratorConfig::default()
        });
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, "q", None).await.unwrap();
        match out.trace.error {
            Some(DispatchError::BackendUnavailable { error, .. }) => assert_eq!(error.cause, BackendCause::Timeout),
            e => panic!("{e:?}"),
        }
    }

    #[tokio::test]
    async fn unknown_image_and_session() {
        let o = orchestrator(fig2_backend());
        let s = o.create_session().unwrap();
        let err = o
            .handle_query(&s, "q", Some(ImageInput::Ref("nope".into())))
            .await
            .unwrap_err();
        assert_eq!(err, OrchestratorError::UnknownImage("nope".into()));
        assert!(o.sessions().snapshot(&s).await.unwrap().turns.is_empty());
        assert!(matches!(
            o.handle_query("missing", "q", None).await,
            Err(OrchestratorError::UnknownSession(_))
        ));
    }

    #[tokio::test]
    async fn image_bytes_resolve_to_fixture_by_content() {
        let bundle = Arc::new(FixtureBundle::synthetic(0, 2));
        let bytes = bundle.image_bytes("probe_scene").unwrap().to_vec();
        let o = Orchestrator::new(Arc::new(fig2_backend()), Arc::new(default_registry(Arc::clone(&bundle))))
            .with_fixtures(bundle);
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, QUERY, Some(ImageInput::Bytes(bytes))).await.unwrap();
        assert!(out.final_reply.contains("[0.18, 0.41, 0.45, 0.99]"));
        assert!(out.trace.image_ref.unwrap().starts_with("sha256:"));
    }

    #[tokio::test]
    async fn follow_up_query_reuses_session_image() {
        let o = orchestrator(fig2_backend());
        let s = o.create_session().unwrap();
        o.handle_query(&s, "What procedure is this?", probe()).await.unwrap();
        let out = o.handle_query(&s, QUERY, None).await.unwrap();
        assert_eq!(out.trace.rounds, 2);
        assert_eq!(out.trace.trace_id, format!("{s}-0002"));
    }

    #[tokio::test]
    async fn replay_is_bytewise_identical() {
        let run = || async {
            let o = orchestrator(fig2_backend());
            let s = o.create_session().unwrap();
            let mut out = Vec::new();
            for q in [QUERY, "What procedure is this?", "unscripted"] {
                let r = o.handle_query(&s, q, probe()).await.unwrap();
                out.push(serde_json::to_string(&r.trace).unwrap());
            }
            out
        };
        assert_eq!(run().await, run().await);
    }

    #[tokio::test]
    async fn persisted_sessions_and_traces_survive_restart() {
        let dir = tempfile::tempdir().unwrap();
        let bundle = Arc::new(FixtureBundle::synthetic(0, 1));
        let build = || {
            Orchestrator::new(Arc::new(fig2_backend()), Arc::new(default_registry(Arc::clone(&bundle))))
                .with_fixtures(Arc::clone(&bundle))
                .with_sessions(SessionStore::open(dir.path().join("sessions")).unwrap())
                .with_traces(TraceStore::open(dir.path().join("traces")).unwrap())
        };
        let o = build();
        let s = o.create_session().unwrap();
        let out = o.handle_query(&s, QUERY, Some(ImageInput::Bytes(vec![1, 2, 3]))).await.unwrap();
        let before = o.sessions().snapshot(&s).await.unwrap();
        drop(o);
        let o = build();
        assert_eq!(o.sessions().snapshot(&s).await.unwrap(), before);
        assert_eq!(o.traces().get(&out.trace.trace_id).unwrap(), out.trace);
        let s2 = o.create_session().unwrap();
        assert_ne!(s, s2);
    }
}
