//! Service configuration: a TOML file whose every key can be overridden by
//! an environment variable.
//!
//! `SURGASSIST_LISTEN` overrides `listen`; nested keys join with a double
//! underscore, so `SURGASSIST_BACKEND__KIND` overrides `backend.kind`.
//! Override values are read as TOML scalars when they parse as one and as
//! strings otherwise.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use surgassist_core::functions::{MAX_FUNCTIONS, MIN_FUNCTIONS};
use surgassist_core::orchestrator::ImageMode;

pub const ENV_PREFIX: &str = "SURGASSIST_";
pub const DEFAULT_MAX_IMAGE_BYTES: usize = 8 * 1024 * 1024;
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";
/// Seed and extra scene count of the built-in fixture bundle used when no
/// bundle directory is configured.
pub const BUILTIN_FIXTURE_SEED: u64 = 0;
pub const BUILTIN_FIXTURE_EXTRA: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Scripted,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendSection {
    #[serde(default)]
    pub kind: BackendKind,
    /// Scripted backend: JSON script file. The built-in probe demo when unset.
    pub script: Option<PathBuf>,
    /// Remote backend endpoint.
    pub url: Option<String>,
    pub model: Option<String>,
    #[serde(default)]
    pub image_mode: ImageMode,
    #[serde(default = "default_backend_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            kind: BackendKind::Scripted,
            script: None,
            url: None,
            model: None,
            image_mode: ImageMode::default(),
            timeout_ms: default_backend_timeout(),
            max_attempts: default_attempts(),
            backoff_ms: default_backoff(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteFunctionSection {
    pub url: String,
    #[serde(default = "default_function_timeout")]
    pub timeout_ms: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionsSection {
    /// Registered functions, from 2 to 6. The first three are the surgical
    /// tools; the rest are distractors.
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default = "default_function_timeout")]
    pub timeout_ms: u64,
    /// Functions served over HTTP instead of from the fixture bundle.
    #[serde(default)]
    pub remote: BTreeMap<String, RemoteFunctionSection>,
}

impl Default for FunctionsSection {
    fn default() -> Self {
        Self {
            count: default_count(),
            timeout_ms: default_function_timeout(),
            remote: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Fixture bundle directory. The built-in synthetic bundle when unset.
    pub fixtures: Option<PathBuf>,
    /// Directory for persisted sessions and traces. In memory when unset.
    pub trace_dir: Option<PathBuf>,
    /// Rejection lexicon file. The built-in lexicon when unset.
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_max_image")]
    pub max_image_bytes: usize,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub functions: FunctionsSection,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: default_listen(),
            fixtures: None,
            trace_dir: None,
            lexicon: None,
            max_image_bytes: default_max_image(),
            backend: BackendSection::default(),
            functions: FunctionsSection::default(),
        }
    }
}

fn default_listen() -> String {
    DEFAULT_LISTEN.into()
}
fn default_max_image() -> usize {
    DEFAULT_MAX_IMAGE_BYTES
}
fn default_backend_timeout() -> u64 {
    surgassist_core::DEFAULT_BACKEND_TIMEOUT.as_millis() as u64
}
fn default_function_timeout() -> u64 {
    surgassist_core::DEFAULT_FUNCTION_TIMEOUT.as_millis() as u64
}
fn default_attempts() -> u32 {
    surgassist_core::DEFAULT_ATTEMPTS
}
fn default_backoff() -> u64 {
    surgassist_core::DEFAULT_BACKOFF.as_millis() as u64
}
fn default_count() -> usize {
    3
}

/// Where a bad value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: Option<usize> },
    Env(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub origin: Origin,
    /// Dotted key path, empty for syntax errors.
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.origin {
            Origin::File { path, line: Some(l) } => write!(f, "{path}:{l}")?,
            Origin::File { path, line: None } => write!(f, "{path}")?,
            Origin::Env(var) => write!(f, "environment variable {var}")?,
        }
        if !self.field.is_empty() {
            write!(f, ": field `{}`", self.field)?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

pub fn env_var_for(field: &str) -> String {
    format!("{ENV_PREFIX}{}", field.replace('.', "__").to_ascii_uppercase())
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Line of the `key = ...` entry for a dotted field path, tracking `[table]`
/// headers. Falls back to the table header when the key itself is absent.
fn locate(text: &str, field: &str) -> Option<usize> {
    let (table, key) = match field.rsplit_once('.') {
        Some((t, k)) => (t, k),
        None => ("", field),
    };
    let mut current = String::new();
    let mut header_line = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = h.trim().trim_matches(|c| c == '[' || c == ']').to_string();
            if current == table {
                header_line = Some(i + 1);
            }
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            let k = k.trim().trim_matches('"');
            let full = if current.is_empty() { k.to_string() } else { format!("{current}.{k}") };
            if full == field || (current == table && k == key) {
                return Some(i + 1);
            }
        }
    }
    header_line
}

fn env_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn apply_override(table: &mut toml::Table, path: &[&str], value: toml::Value) {
    match path {
        [] => {}
        [last] => {
            table.insert((*last).to_string(), value);
        }
        [head, rest @ ..] => {
            let entry = table
                .entry((*head).to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !entry.is_table() {
                *entry = toml::Value::Table(toml::Table::new());
            }
            if let toml::Value::Table(t) = entry {
                apply_override(t, rest, value);
            }
        }
    }
}

impl ServiceConfig {
    /// Parses `text` (read from `source`) with overrides from `env`, then
    /// validates the result.
    pub fn from_parts<'a>(
        text: &str,
        source: &str,
        env: impl IntoIterator<Item = (&'a str, &'a str)>,
    ) -> Result<Self, ConfigError> {
        let file_err = |line, field: String, message: String| ConfigError {
            origin: Origin::File {
                path: source.to_string(),
                line,
            },
            field,
            message,
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map(|s| line_of(text, s.start));
            file_err(line, String::new(), e.message().trim().to_string())
        })?;
        let mut from_env = BTreeMap::new();
        for (var, raw) in env {
            let Some(rest) = var.strip_prefix(ENV_PREFIX) else { continue };
            let field = rest.to_ascii_lowercase().replace("__", ".");
            let path: Vec<&str> = field.split('.').collect();
            apply_override(&mut table, &path, env_value(raw));
            from_env.insert(field.clone(), var.to_string());
        }
        let locate_err = |field: String, message: String| match from_env.get(&field) {
            Some(var) => ConfigError {
                origin: Origin::Env(var.clone()),
                field,
                message,
            },
            None => file_err(locate(text, &field), field, message),
        };
        let config: ServiceConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let field = e.path().to_string();
            let field = if field == "." { String::new() } else { field };
            let message = e.into_inner().message().trim().to_string();
            locate_err(field, message)
        })?;
        config.validate().map_err(|(field, message)| locate_err(field.to_string(), message))?;
        Ok(config)
    }

    /// Reads `path` (or starts from defaults when `None`) and applies
    /// `SURGASSIST_*` variables from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let (text, source) = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError {
                    origin: Origin::File {
                        path: p.display().to_string(),
                        line: None,
                    },
                    field: String::new(),
                    message: e.to_string(),
                })?;
                (text, p.display().to_string())
            }
            None => (String::new(), "<defaults>".to_string()),
        };
        let env: Vec<(String, String)> = std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        Self::from_parts(&text, &source, env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        if self.listen.parse::<std::net::SocketAddr>().is_err() {
            return Err(("listen", format!("{:?} is not a socket address like 127.0.0.1:8080", self.listen)));
        }
        if self.max_image_bytes == 0 {
            return Err(("max_image_bytes", "must be positive".into()));
        }
        if !(MIN_FUNCTIONS..=MAX_FUNCTIONS).contains(&self.functions.count) {
            return Err((
                "functions.count",
                format!("must be in {MIN_FUNCTIONS}..={MAX_FUNCTIONS}, got {}", self.functions.count),
            ));
        }
        if self.backend.kind == BackendKind::Remote && self.backend.url.is_none() {
            return Err(("backend.url", "required when backend.kind = \"remote\"".into()));
        }
        if self.backend.timeout_ms == 0 {
            return Err(("backend.timeout_ms", "must be positive".into()));
        }
        if self.functions.timeout_ms == 0 {
            return Err(("functions.timeout_ms", "must be positive".into()));
        }
        Ok(())
    }
}
