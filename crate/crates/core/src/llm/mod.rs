//! Multi-turn prompting of a chat model for `k` candidate summaries.

pub mod generate;
pub mod parse;
pub mod prompt;
pub mod transport;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use generate::{
    generate_all, generate_candidates, generate_concatenated, generate_zero_shot, run_bounded,
    CandidateRecord, CandidateSet, GenerationOutcome, PromptShape, SkipReason, SkipRecord,
};
pub use parse::{parse_candidates, render_candidates, FormatError};
pub use prompt::{
    build_concatenated_turn, build_corrective_turn, build_demonstration_turn,
    build_document_only_demonstration_turn, build_inference_turn, build_zero_shot_turn,
};
pub use transport::{
    send_chat, ChatRequest, ChatTransport, FnTransport, LiveTransport, RecordingTransport,
    ReplayBook, ReplayTransport, RetryPolicy, TransportError, DEMO_PLACEHOLDER,
};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid transcript: {0}")]
    InvalidTranscript(String),
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("demonstration {doc_id:?} has no gold summary")]
    MissingSummary { doc_id: String },
    #[error("request for {doc_id:?} was refused by the content filter: {reason}")]
    ContentFiltered { doc_id: String, reason: String },
    #[error("no recorded reply for request digest {digest}")]
    MissingRecording { digest: String },
    #[error("transport failed after {attempts} attempt(s): {message}")]
    Transport { attempts: usize, message: String },
    #[error("replay file {path}: {message}")]
    ReplayFile { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }
}

/// Ordered conversation. After an optional leading system message, roles
/// alternate user / assistant starting with user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    messages: Vec<ChatMessage>,
}

impl ChatTranscript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_messages(messages: Vec<ChatMessage>) -> Result<Self, LlmError> {
        let mut t = ChatTranscript::new();
        for m in messages {
            t.push(m)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, message: ChatMessage) -> Result<(), LlmError> {
        let expected = match (self.messages.last().map(|m| m.role), message.role) {
            (None, Role::System) => Role::System,
            (_, Role::System) => {
                return Err(LlmError::InvalidTranscript(
                    "system message must come first".into(),
                ))
            }
            (None | Some(Role::System) | Some(Role::Assistant), _) => Role::User,
            (Some(Role::User), _) => Role::Assistant,
        };
        if message.role != expected {
            return Err(LlmError::InvalidTranscript(format!(
                "expected a {expected} turn, got {}",
                message.role
            )));
        }
        if message.role != Role::System && message.content.is_empty() {
            return Err(LlmError::InvalidTranscript(format!(
                "{} turn has empty content",
                message.role
            )));
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn last_role(&self) -> Option<Role> {
        self.messages.last().map(|m| m.role)
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.messages.iter().filter(|m| m.role == role).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub k: usize,
    pub max_format_retries: usize,
    pub temperature: f64,
    pub model_name: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            k: 5,
            max_format_retries: 5,
            temperature: 1.0,
            model_name: "gpt-3.5-turbo".to_string(),
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.k == 0 {
            return Err(LlmError::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidConfig(format!(
                "temperature must be finite and >= 0, got {}",
                self.temperature
            )));
        }
        if self.model_name.is_empty() {
            return Err(LlmError::InvalidConfig("model name is empty".into()));
        }
        Ok(())
    }
}
