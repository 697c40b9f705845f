use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use surgassist_core::eval::{EvalCase, RejectionLexicon};
use surgassist_core::functions::{
    registry_with_count, FixtureBundle, Registry, RemoteFunction, RemoteFunctionConfig, SurgicalFunction,
};
use surgassist_core::orchestrator::{
    LlmBackend, Orchestrator, OrchestratorConfig, RemoteBackend, RemoteBackendConfig, ScriptedBackend, SessionStore,
    TraceStore,
};
use surgassist_core::protocol::{read_jsonl, DatasetRecord};

use crate::config::{BackendKind, BackendSection, ServiceConfig, BUILTIN_FIXTURE_EXTRA, BUILTIN_FIXTURE_SEED};
use crate::error::CliError;

/// Everything a running service or CLI command needs.
#[derive(Clone)]
pub struct App {
    pub orchestrator: Arc<Orchestrator>,
    pub bundle: Arc<FixtureBundle>,
    pub lexicon: Arc<RejectionLexicon>,
    pub backend_label: String,
    pub max_image_bytes: usize,
}

pub fn load_bundle(dir: Option<&Path>) -> Result<FixtureBundle, CliError> {
    match dir {
        Some(d) => FixtureBundle::load_dir(d).map_err(|e| CliError::input(format!("fixture bundle {}: {e}", d.display()))),
        None => Ok(FixtureBundle::synthetic(BUILTIN_FIXTURE_SEED, BUILTIN_FIXTURE_EXTRA)),
    }
}

pub fn load_lexicon(path: Option<&Path>) -> Result<RejectionLexicon, CliError> {
    match path {
        Some(p) => RejectionLexicon::load(p).map_err(|e| CliError::input(format!("lexicon {}: {e}", p.display()))),
        None => Ok(RejectionLexicon::builtin()),
    }
}

pub fn build_registry(bundle: &Arc<FixtureBundle>, config: &ServiceConfig) -> Result<Registry, CliError> {
    let base = registry_with_count(Arc::clone(bundle), config.functions.count).map_err(|e| CliError::config(e.to_string()))?;
    for name in config.functions.remote.keys() {
        if base.spec(name).is_none() {
            return Err(CliError::config(format!(
                "functions.remote.{name}: no such function among the {} registered",
                base.len()
            )));
        }
    }
    let mut registry = Registry::new();
    for spec in base.specs() {
        let imp: Arc<dyn SurgicalFunction> = match config.functions.remote.get(&spec.api_name) {
            Some(r) => {
                let mut cfg = RemoteFunctionConfig::new(r.url.clone(), spec.output_kind);
                cfg.timeout = Duration::from_millis(r.timeout_ms);
                cfg.max_attempts = r.max_attempts;
                Arc::new(RemoteFunction::new(cfg).map_err(|e| CliError::config(e.to_string()))?)
            }
            None => base.lookup(&spec.api_name).map_err(|e| CliError::config(e.to_string()))?,
        };
        registry.register(spec, imp).map_err(|e| CliError::config(e.to_string()))?;
    }
    Ok(registry)
}

pub fn build_backend(section: &BackendSection) -> Result<(Arc<dyn LlmBackend>, String), CliError> {
    match section.kind {
        BackendKind::Scripted => {
            let backend = match &section.script {
                Some(p) => ScriptedBackend::load(p).map_err(CliError::input)?,
                None => ScriptedBackend::probe_demo(),
            };
            Ok((Arc::new(backend), "scripted".into()))
        }
        BackendKind::Remote => {
            let url = section.url.clone().ok_or_else(|| CliError::config("backend.url is required"))?;
            let mut cfg = RemoteBackendConfig::new(url.clone());
            cfg.model = section.model.clone();
            cfg.image_mode = section.image_mode;
            cfg.timeout = Duration::from_millis(section.timeout_ms);
            cfg.max_attempts = section.max_attempts;
            cfg.backoff = Duration::from_millis(section.backoff_ms);
            let backend = RemoteBackend::new(cfg).map_err(|e| CliError::config(e.to_string()))?;
            Ok((Arc::new(backend), format!("remote {url}")))
        }
    }
}

impl App {
    pub fn from_config(config: &ServiceConfig) -> Result<Self, CliError> {
        let bundle = Arc::new(load_bundle(config.fixtures.as_deref())?);
        let (backend, label) = build_backend(&config.backend)?;
        Self::assemble(config, bundle, backend, label)
    }

    /// Like [`App::from_config`] with an explicit backend.
    pub fn assemble(
        config: &ServiceConfig,
        bundle: Arc<FixtureBundle>,
        backend: Arc<dyn LlmBackend>,
        backend_label: String,
    ) -> Result<Self, CliError> {
        let registry = build_registry(&bundle, config)?;
        let lexicon = load_lexicon(config.lexicon.as_deref())?;
        let (sessions, traces) = match &config.trace_dir {
            Some(dir) => {
                let open_err = |e| CliError::runtime(format!("state directory {}: {e}", dir.display()));
                (
                    SessionStore::open(dir.join("sessions")).map_err(open_err)?,
                    TraceStore::open(dir.join("traces")).map_err(open_err)?,
                )
            }
            None => (SessionStore::in_memory(), TraceStore::in_memory()),
        };
        let orchestrator = Orchestrator::new(backend, Arc::new(registry))
            .with_fixtures(Arc::clone(&bundle))
            .with_sessions(sessions)
            .with_traces(traces)
            .with_config(OrchestratorConfig {
                backend_timeout: Duration::from_millis(config.backend.timeout_ms),
                function_timeout: Duration::from_millis(config.functions.timeout_ms),
            });
        Ok(Self {
            orchestrator: Arc::new(orchestrator),
            bundle,
            lexicon: Arc::new(lexicon),
            backend_label,
            max_image_bytes: config.max_image_bytes,
        })
    }
}

/// Evaluation input: dataset records carry gold replies, bare cases do not.
#[derive(Debug, Clone)]
pub enum CaseFile {
    Records(Vec<DatasetRecord>),
    Cases(Vec<EvalCase>),
}

impl CaseFile {
    pub fn cases(&self) -> Vec<EvalCase> {
        match self {
            Self::Records(r) => surgassist_core::eval::cases_from_records(r),
            Self::Cases(c) => c.clone(),
        }
    }
}

/// Reads a JSONL file of dataset records, or of evaluation cases when the
/// first line is not a record.
pub fn read_cases(path: &Path) -> Result<CaseFile, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or_default();
    let err = |e| CliError::input(format!("{}: {e}", path.display()));
    if serde_json::from_str::<DatasetRecord>(first).is_ok() {
        Ok(CaseFile::Records(read_jsonl(text.as_bytes()).map_err(err)?))
    } else {
        Ok(CaseFile::Cases(read_jsonl(text.as_bytes()).map_err(err)?))
    }
}
