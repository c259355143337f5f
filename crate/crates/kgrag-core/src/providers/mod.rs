//! Uniform interface to text-generation, logit-scoring, and embedding
//! backends.
//!
//! Three trait objects cover everything the pipeline needs; implementations
//! here are the scripted fixtures ([`scripted`]), the seeded hashing
//! embedder ([`hash_embed`]), a chat-completions-style HTTP adapter
//! ([`http`]), and a transparent response cache ([`cache`]). Scripted
//! providers are pure functions of the request, which is what makes every
//! offline build and evaluation in this crate reproducible.

pub mod cache;
pub mod counting;
pub mod hash_embed;
pub mod http;
pub mod scripted;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Logit value substituted for answer tokens a backend did not report.
///
/// Large and negative so the softmax assigns the slot essentially zero
/// mass, but finite so an all-missing vector still produces a valid
/// (uniform) distribution.
pub const MISSING_LOGIT: f64 = -1.0e9;

#[derive(Debug, Error)]
pub enum ProviderError {
    /// Retryable transport failure (connection, timeout).
    #[error("transport error: {0}")]
    Transport(String),
    /// Non-retryable backend failure, carries the backend message.
    #[error("backend error: {0}")]
    Backend(String),
    /// The backend cannot serve this kind of request at all.
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

/// A chat-completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            max_tokens: 1024,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.system_prompt.is_empty() || self.user_prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        Ok(())
    }
}

/// A request for per-answer-token log scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitRequest {
    pub prompt: String,
    /// Candidate answers, typically the digit strings `"0"..="m"`.
    pub answer_tokens: Vec<String>,
}

impl LogitRequest {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.prompt.is_empty() {
            return Err(ProviderError::InvalidRequest("empty prompt".into()));
        }
        if self.answer_tokens.is_empty() {
            return Err(ProviderError::InvalidRequest("no answer tokens".into()));
        }
        for (i, t) in self.answer_tokens.iter().enumerate() {
            if self.answer_tokens[..i].contains(t) {
                return Err(ProviderError::InvalidRequest(format!(
                    "duplicate answer token {t:?}"
                )));
            }
        }
        Ok(())
    }
}

/// One logit per answer token, in request order. Slots the backend did not
/// report hold [`MISSING_LOGIT`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitVector {
    pub values: Vec<f64>,
}

/// A fixed-dimension embedding tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

pub trait ChatProvider: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError>;
}

pub trait LogitProvider: Send + Sync {
    fn score_logits(&self, req: &LogitRequest) -> Result<LogitVector, ProviderError>;
}

pub trait EmbeddingProvider: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError>;
    fn model_id(&self) -> &str;
    fn dimension(&self) -> usize;
}

/// The bundle of backends a pipeline stage runs against.
#[derive(Clone)]
pub struct ProviderSet {
    pub chat: Arc<dyn ChatProvider>,
    pub logits: Arc<dyn LogitProvider>,
    pub embedder: Arc<dyn EmbeddingProvider>,
}

impl ProviderSet {
    /// Wraps all three backends in the given response cache.
    pub fn with_cache(self, store: Arc<cache::CacheStore>) -> Self {
        Self {
            chat: Arc::new(cache::CachedChat::new(self.chat, store.clone())),
            logits: Arc::new(cache::CachedLogits::new(self.logits, store.clone())),
            embedder: Arc::new(cache::CachedEmbedder::new(self.embedder, store)),
        }
    }
}
