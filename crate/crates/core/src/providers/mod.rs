//! Chat-completion and embedding backends.
//!
//! Everything the pipeline asks of a language model goes through
//! [`ChatProvider`]; vectors for scoring go through [`Embedder`]. Two families
//! of implementations exist: live OpenAI-compatible HTTP clients
//! ([`OpenAiChatClient`], [`OpenAiEmbedder`]) and offline ones
//! ([`ScriptedProvider`] for fixture replay, [`HashingEmbedder`]).
//!
//! Wrap any provider in [`Recorded`] to append a [`ProviderRecord`] per call to
//! a shared [`CallLog`].

mod embed;
mod openai;
mod record;
mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use embed::{tokenize, HashingEmbedder, OpenAiEmbedder, HASHING_DIMENSION};
pub use openai::{OpenAiChatClient, RetryPolicy, API_KEY_ENV};
pub use record::{CallLog, ProviderRecord, Recorded};
pub use scripted::{FixtureEntry, FixtureRecorder, ScriptedProvider};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

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
}

/// Decoding parameters sent with every chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl Default for ChatParams {
    fn default() -> Self {
        ChatParams {
            model: "default".into(),
            temperature: 0.0,
            max_tokens: 1024,
            seed: None,
        }
    }
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProviderError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(ProviderError::InvalidRequest("max_tokens must be positive".into()));
        }
        if self.model.trim().is_empty() {
            return Err(ProviderError::InvalidRequest("model id is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("network error after {attempts} attempt(s): {message}")]
    Network { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("provider returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider returned an empty response")]
    EmptyResponse,
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("no fixture for request {key_hash}")]
    MissingFixture { key_hash: String },
    #[error("fixture error: {0}")]
    Fixture(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    /// Transport-level failures that a retry may cure.
    pub fn is_retryable(&self) -> bool {
        match self {
            ProviderError::Network { .. } | ProviderError::Timeout { .. } => true,
            ProviderError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

pub trait ChatProvider: Send + Sync {
    /// Returns the assistant reply for `messages`.
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError>;
}

impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        (**self).complete(messages, params)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for &P {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        (**self).complete(messages, params)
    }
}

impl<P: ChatProvider + ?Sized> ChatProvider for Box<P> {
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        (**self).complete(messages, params)
    }
}

/// Adapter turning a closure into a provider. Handy for tests and simulations.
pub struct FnProvider<F>(pub F);

impl<F> ChatProvider for FnProvider<F>
where
    F: Fn(&[ChatMessage], &ChatParams) -> Result<String, ProviderError> + Send + Sync,
{
    fn complete(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, ProviderError> {
        (self.0)(messages, params)
    }
}

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError>;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts)
    }
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ProviderError> {
        (**self).embed(texts)
    }
}

/// Request precondition: non-empty, ends on a user or system turn, and no
/// empty user/assistant content.
pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), ProviderError> {
    let last = messages
        .last()
        .ok_or_else(|| ProviderError::InvalidRequest("empty message list".into()))?;
    if last.role == Role::Assistant {
        return Err(ProviderError::InvalidRequest(
            "message list must end with a user or system message".into(),
        ));
    }
    if let Some(i) = messages
        .iter()
        .position(|m| m.role != Role::System && m.content.trim().is_empty())
    {
        return Err(ProviderError::InvalidRequest(format!("message {i} has empty content")));
    }
    Ok(())
}

/// Content hash of a full message list; the key under which fixtures store
/// replies.
pub fn fixture_key(messages: &[ChatMessage]) -> String {
    let bytes = serde_json::to_vec(messages).expect("messages serialize");
    hex::encode(Sha256::digest(&bytes))
}
