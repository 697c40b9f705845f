use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use crate::protocol::{render_structured, DatasetRecord, FunctionCall, Role, StructuredReply, Turn};

/// Session images keyed by content id.
pub type ImageStore = BTreeMap<String, Arc<[u8]>>;

/// What a backend sees: the turns so far plus the images they reference.
#[derive(Debug, Clone, Copy)]
pub struct Conversation<'a> {
    pub turns: &'a [Turn],
    pub images: &'a ImageStore,
}

impl<'a> Conversation<'a> {
    pub fn last_user_turn(&self) -> Option<(usize, &'a Turn)> {
        self.turns.iter().enumerate().rev().find(|(_, t)| t.role == Role::User)
    }

    /// True when a function turn follows the last user turn.
    pub fn after_function(&self) -> bool {
        let start = self.last_user_turn().map_or(0, |(i, _)| i + 1);
        self.turns[start..].iter().any(|t| t.role == Role::Function)
    }

    /// Most recent image referenced by a user turn.
    pub fn current_image(&self) -> Option<&'a str> {
        self.turns
            .iter()
            .rev()
            .filter(|t| t.role == Role::User)
            .find_map(|t| t.image_ref.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendCause {
    Transport,
    Status(u16),
    Timeout,
    Schema,
}

impl std::fmt::Display for BackendCause {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Transport => f.write_str("transport"),
            Self::Status(code) => write!(f, "status {code}"),
            Self::Timeout => f.write_str("timeout"),
            Self::Schema => f.write_str("schema"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("backend unavailable after {attempts} attempt(s) ({cause}): {detail}")]
pub struct BackendError {
    pub cause: BackendCause,
    pub detail: String,
    pub attempts: u32,
}

/// A language model producing structured-reply text. Implementations keep no
/// state between calls.
#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn generate(&self, conversation: Conversation<'_>) -> Result<String, BackendError>;
}

#[async_trait]
impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    async fn generate(&self, conversation: Conversation<'_>) -> Result<String, BackendError> {
        (**self).generate(conversation).await
    }
}

/// One scripted reply. Without `image_ref` the entry matches any image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default)]
    pub after_function: bool,
    pub reply: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub default_reply: String,
    pub entries: Vec<ScriptEntry>,
}

type Key = (String, Option<String>, bool);

pub const PROBE_DEMO_QUERY: &str = "Where is the navigation probe?";

/// Deterministic stand-in for a tuned model: replays the text registered for
/// (last user query, image, whether a function turn followed it).
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    entries: HashMap<Key, String>,
    default_reply: String,
}

pub fn default_scripted_reply() -> String {
    render_structured(&StructuredReply::new(
        "No scripted answer matches this query.",
        None,
        "I do not have an answer for that question yet.",
    ))
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new(default_scripted_reply())
    }
}

impl ScriptedBackend {
    pub fn new(default_reply: impl Into<String>) -> Self {
        Self {
            entries: HashMap::new(),
            default_reply: default_reply.into(),
        }
    }

    pub fn insert(&mut self, entry: ScriptEntry) {
        let key = (entry.query.trim().to_string(), entry.image_ref, entry.after_function);
        self.entries.insert(key, entry.reply);
    }

    pub fn with(mut self, query: &str, after_function: bool, reply: &StructuredReply) -> Self {
        self.insert(ScriptEntry {
            query: query.into(),
            image_ref: None,
            after_function,
            reply: render_structured(reply),
        });
        self
    }

    /// Like [`ScriptedBackend::with`] but stores `text` verbatim, so malformed
    /// replies can be scripted.
    pub fn with_raw(mut self, query: &str, after_function: bool, text: &str) -> Self {
        self.insert(ScriptEntry {
            query: query.into(),
            image_ref: None,
            after_function,
            reply: text.into(),
        });
        self
    }

    pub fn from_script(script: Script) -> Self {
        let mut backend = Self::new(script.default_reply);
        for e in script.entries {
            backend.insert(e);
        }
        backend
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let script: Script = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(Self::from_script(script))
    }

    /// A backend that answers every record exactly as its gold reply says:
    /// calls are announced in round one, the gold reply follows the result.
    pub fn from_records(records: &[DatasetRecord]) -> Self {
        let mut backend = Self::default();
        for r in records {
            let first = match &r.gold.calling {
                None => r.gold.clone(),
                Some(call) => {
                    backend.insert(ScriptEntry {
                        query: r.query.clone(),
                        image_ref: r.image_ref.clone(),
                        after_function: true,
                        reply: render_structured(&StructuredReply::new(
                            "The function result answers the question.",
                            None,
                            r.gold.replying.clone(),
                        )),
                    });
                    StructuredReply::new(
                        r.gold.thinking.clone(),
                        Some(call.clone()),
                        format!("Running {} on this image.", call.api_name),
                    )
                }
            };
            backend.insert(ScriptEntry {
                query: r.query.clone(),
                image_ref: r.image_ref.clone(),
                after_function: false,
                reply: render_structured(&first),
            });
        }
        backend
    }

    /// The probe-localization exchange: a detection call for
    /// "Where is the navigation probe?" and a reply quoting the box.
    pub fn probe_demo() -> Self {
        let query = PROBE_DEMO_QUERY;
        Self::default()
            .with(
                query,
                false,
                &StructuredReply::new(
                    "The surgeon asks for the probe location, so run detection on it.",
                    Some(FunctionCall::new("detect").param("target", "navigation probe")),
                    "Locating the navigation probe.",
                ),
            )
            .with(
                query,
                true,
                &StructuredReply::new(
                    "Detection returned one navigation probe box.",
                    None,
                    "The navigation probe is located at [0.18, 0.41, 0.45, 0.99].",
                ),
            )
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn reply_for(&self, query: &str, image_ref: Option<&str>, after_function: bool) -> &str {
        let query = query.trim().to_string();
        let exact = (query.clone(), image_ref.map(str::to_string), after_function);
        self.entries
            .get(&exact)
            .or_else(|| self.entries.get(&(query, None, after_function)))
            .unwrap_or(&self.default_reply)
    }
}

#[async_trait]
impl LlmBackend for ScriptedBackend {
    async fn generate(&self, conversation: Conversation<'_>) -> Result<String, BackendError> {
        let query = conversation.last_user_turn().map_or("", |(_, t)| t.content.as_str());
        let image = conversation.current_image();
        Ok(self
            .reply_for(query, image, conversation.after_function())
            .to_string())
    }
}
