//! Chat-completion style HTTP backend.
//!
//! Request: `POST {"model"?, "messages": [{"role", "content", "image"? | "image_base64"?}]}`.
//! Response: `{"choices": [{"message": {"content": "..."}}]}` or `{"content": "..."}`.

use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::backend::{BackendCause, BackendError, Conversation, LlmBackend};
use crate::protocol::{render_structured, Role};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageMode {
    /// Send the content id only.
    #[default]
    Reference,
    /// Inline the image bytes as base64.
    Base64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteBackendConfig {
    pub url: String,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub image_mode: ImageMode,
    #[serde(with = "crate::duration_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
    #[serde(with = "crate::duration_ms", default = "default_backoff")]
    pub backoff: Duration,
}

fn default_timeout() -> Duration {
    crate::DEFAULT_BACKEND_TIMEOUT
}

fn default_attempts() -> u32 {
    crate::DEFAULT_ATTEMPTS
}

fn default_backoff() -> Duration {
    crate::DEFAULT_BACKOFF
}

impl RemoteBackendConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: None,
            image_mode: ImageMode::default(),
            timeout: default_timeout(),
            max_attempts: default_attempts(),
            backoff: default_backoff(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    config: RemoteBackendConfig,
    client: reqwest::Client,
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::User => "user",
        Role::Assistant => "assistant",
        Role::Function => "function",
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteBackendConfig) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError {
                cause: BackendCause::Transport,
                detail: e.to_string(),
                attempts: 0,
            })?;
        Ok(Self { config, client })
    }

    pub fn config(&self) -> &RemoteBackendConfig {
        &self.config
    }

    /// Request body for `conversation`. Assistant turns that carry a parsed
    /// reply are sent in the tagged wire format.
    pub fn request_body(&self, conversation: Conversation<'_>) -> Value {
        let messages: Vec<Value> = conversation
            .turns
            .iter()
            .map(|t| {
                let content = match &t.structured {
                    Some(reply) if t.role == Role::Assistant => render_structured(reply),
                    _ => t.content.clone(),
                };
                let mut m = json!({"role": role_name(t.role), "content": content});
                if let Some(id) = &t.image_ref {
                    match self.config.image_mode {
                        ImageMode::Reference => m["image"] = json!(id),
                        ImageMode::Base64 => {
                            if let Some(bytes) = conversation.images.get(id) {
                                m["image_base64"] = json!(base64::engine::general_purpose::STANDARD.encode(bytes));
                            } else {
                                m["image"] = json!(id);
                            }
                        }
                    }
                }
                m
            })
            .collect();
        let mut body = json!({ "messages": messages });
        if let Some(model) = &self.config.model {
            body["model"] = json!(model);
        }
        body
    }

    async fn attempt(&self, body: &Value) -> Result<String, (BackendCause, String)> {
        let transport = |e: reqwest::Error| {
            let cause = if e.is_timeout() {
                BackendCause::Timeout
            } else {
                BackendCause::Transport
            };
            (cause, e.to_string())
        };
        let response = self
            .client
            .post(&self.config.url)
            .json(body)
            .send()
            .await
            .map_err(transport)?;
        let status = response.status();
        let bytes = response.bytes().await.map_err(transport)?;
        if status != reqwest::StatusCode::OK {
            let text: String = String::from_utf8_lossy(&bytes).chars().take(200).collect();
            return Err((BackendCause::Status(status.as_u16()), text));
        }
        let value: Value = serde_json::from_slice(&bytes).map_err(|e| (BackendCause::Schema, e.to_string()))?;
        value
            .pointer("/choices/0/message/content")
            .or_else(|| value.get("content"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| (BackendCause::Schema, "response has no message content".to_string()))
    }
}

fn retryable(cause: BackendCause) -> bool {
    match cause {
        BackendCause::Transport | BackendCause::Timeout => true,
        BackendCause::Status(code) => code >= 500 || code == 429,
        BackendCause::Schema => false,
    }
}

#[async_trait]
impl LlmBackend for RemoteBackend {
    async fn generate(&self, conversation: Conversation<'_>) -> Result<String, BackendError> {
        let body = self.request_body(conversation);
        let max = self.config.max_attempts.max(1);
        let mut attempts = 0;
        loop {
            if attempts > 0 {
                tokio::time::sleep(self.config.backoff).await;
            }
            attempts += 1;
            match self.attempt(&body).await {
                Ok(text) => return Ok(text),
                Err((cause, detail)) if retryable(cause) && attempts < max => {
                    tracing::warn!(url = %self.config.url, attempt = attempts, %cause, %detail, "backend attempt failed");
                }
                Err((cause, detail)) => return Err(BackendError { cause, detail, attempts }),
            }
        }
    }
}
