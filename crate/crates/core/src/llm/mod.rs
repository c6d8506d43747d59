//! Chat-completion gateway: prompt templates, a live HTTP client and
//! deterministic replay/recording clients.
//!
//! Every model call in the pipeline goes through [`ChatModel`], so the same
//! orchestration runs against a hosted endpoint or a recorded transcript.

mod client;
mod scripted;
mod structured;
mod templates;

pub use client::{HttpReply, LiveClient, RetryPolicy, Transport, TransportError, UreqTransport};
pub use scripted::{digest, Rule, RuleClient, RecordingClient, ReplayClient, Transcript};
pub use structured::{extract_json_block, parse_json_block};
pub use templates::{render_prompt, PromptTemplate, Slots, TemplateError, TemplateName, TemplateSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("no transcript entry for digest {digest} (template {template})\n--- prompt ---\n{prompt}")]
    Determinism {
        digest: String,
        template: String,
        prompt: String,
    },
    #[error("invalid model response: {0}")]
    InvalidResponse(String),
    #[error("replay requires temperature 0, got {0}")]
    NonZeroTemperature(f64),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("{0}")]
    NotConfigured(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template: TemplateName,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(template: TemplateName, user: impl Into<String>) -> Self {
        Self {
            template,
            system: SYSTEM_PROMPT.to_string(),
            user: user.into(),
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

pub const SYSTEM_PROMPT: &str =
    "You are a precise research assistant. Follow the output format exactly.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: String,
}

/// Anything that turns a rendered prompt into model text.
///
/// Implementations are immutable after construction and may be shared
/// across threads.
pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError>;
}

impl<T: ChatModel + ?Sized> ChatModel for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}

impl<T: ChatModel + ?Sized> ChatModel for &T {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        (**self).complete(request)
    }
}
