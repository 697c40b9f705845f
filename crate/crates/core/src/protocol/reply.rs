use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::functions::FunctionResult;

/// `api_name` plus ordered string parameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionCall {
    pub api_name: String,
    #[serde(default)]
    pub api_params: IndexMap<String, String>,
}

/// True for names matching `[A-Za-z0-9_.-]+`.
pub fn is_valid_api_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'))
}

impl FunctionCall {
    pub fn new(api_name: impl Into<String>) -> Self {
        Self {
            api_name: api_name.into(),
            api_params: IndexMap::new(),
        }
    }

    pub fn param(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.api_params.insert(name.into(), value.into());
        self
    }
}

/// The three parts of one model output.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StructuredReply {
    pub thinking: String,
    pub calling: Option<FunctionCall>,
    pub replying: String,
}

impl StructuredReply {
    pub fn new(thinking: impl Into<String>, calling: Option<FunctionCall>, replying: impl Into<String>) -> Self {
        Self {
            thinking: thinking.into(),
            calling,
            replying: replying.into(),
        }
    }

    /// Checks the conditions under which rendering and parsing are inverse:
    /// trimmed text, a non-empty reply and a well-formed api name.
    pub fn validate(&self) -> Result<(), String> {
        if self.thinking.trim() != self.thinking {
            return Err("thinking has leading or trailing whitespace".into());
        }
        if self.replying.trim() != self.replying {
            return Err("replying has leading or trailing whitespace".into());
        }
        if self.replying.is_empty() {
            return Err("replying is empty".into());
        }
        if let Some(call) = &self.calling {
            if !is_valid_api_name(&call.api_name) {
                return Err(format!("invalid api_name {:?}", call.api_name));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    User,
    Assistant,
    Function,
}

/// One conversation turn. Function turns always carry the result they render;
/// assistant turns produced from a parsed model output keep it in
/// `structured` while `content` holds the user-facing text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub content: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attached_result: Option<FunctionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structured: Option<StructuredReply>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_id: Option<String>,
}

impl Turn {
    pub fn user(content: impl Into<String>, image_ref: Option<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
            image_ref,
            attached_result: None,
            structured: None,
            trace_id: None,
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
            image_ref: None,
            attached_result: None,
            structured: None,
            trace_id: None,
        }
    }

    /// Assistant turn showing `reply.replying` and keeping the full reply.
    pub fn assistant_reply(reply: StructuredReply) -> Self {
        Self {
            content: reply.replying.clone(),
            structured: Some(reply),
            ..Self::assistant("")
        }
    }

    pub fn function(result: FunctionResult) -> Self {
        Self {
            role: Role::Function,
            content: result.render_text(),
            image_ref: None,
            attached_result: Some(result),
            structured: None,
            trace_id: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.role == Role::Function && self.attached_result.is_none() {
            return Err("function turn without attached_result".into());
        }
        Ok(())
    }
}
