//! Call-counting wrappers for asserting backend traffic in tests.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use crate::providers::{
    ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, LogitProvider, LogitRequest,
    LogitVector, ProviderError,
};

pub struct CountingChat {
    pub inner: Arc<dyn ChatProvider>,
    pub calls: Arc<AtomicUsize>,
}

impl CountingChat {
    pub fn new(inner: Arc<dyn ChatProvider>) -> Self {
        Self { inner, calls: Arc::new(AtomicUsize::new(0)) }
    }
}

impl ChatProvider for CountingChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.chat(req)
    }
}

pub struct CountingLogits {
    pub inner: Arc<dyn LogitProvider>,
    pub calls: Arc<AtomicUsize>,
}

impl CountingLogits {
    pub fn new(inner: Arc<dyn LogitProvider>) -> Self {
        Self { inner, calls: Arc::new(AtomicUsize::new(0)) }
    }
}

impl LogitProvider for CountingLogits {
    fn score_logits(&self, req: &LogitRequest) -> Result<LogitVector, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.score_logits(req)
    }
}

pub struct CountingEmbedder {
    pub inner: Arc<dyn EmbeddingProvider>,
    pub calls: Arc<AtomicUsize>,
}

impl CountingEmbedder {
    pub fn new(inner: Arc<dyn EmbeddingProvider>) -> Self {
        Self { inner, calls: Arc::new(AtomicUsize::new(0)) }
    }
}

impl EmbeddingProvider for CountingEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.embed(text)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
}
