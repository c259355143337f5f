//! Write-through response cache keyed on the canonical serialization of each
//! request. Transparent: a cached provider returns exactly what its inner
//! provider would. Persisted as JSON lines sorted by key, so repeated builds
//! produce byte-identical cache files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::providers::{
    ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, LogitProvider, LogitRequest,
    LogitVector, ProviderError,
};

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    k: String,
    v: String,
}

/// Shared key-value store. Reads and writes go through one mutex; only
/// successful responses are stored.
#[derive(Debug, Default)]
pub struct CacheStore {
    path: Option<PathBuf>,
    entries: Mutex<BTreeMap<String, String>>,
}

impl CacheStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Binds the store to `path`, loading any existing cache file.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let mut entries = BTreeMap::new();
        if path.exists() {
            let text = std::fs::read_to_string(path)?;
            for (n, line) in text.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: CacheLine = serde_json::from_str(line).map_err(|e| {
                    std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("cache line {}: {e}", n + 1),
                    )
                })?;
                entries.insert(parsed.k, parsed.v);
            }
        }
        Ok(Self { path: Some(path.to_path_buf()), entries: Mutex::new(entries) })
    }

    pub fn get(&self, key: &str) -> Option<String> {
        self.entries.lock().unwrap().get(key).cloned()
    }

    pub fn put(&self, key: String, value: String) {
        self.entries.lock().unwrap().insert(key, value);
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes all entries in key order. No-op for in-memory stores.
    pub fn flush(&self) -> std::io::Result<()> {
        let Some(path) = &self.path else { return Ok(()) };
        let entries = self.entries.lock().unwrap();
        let mut out = Vec::new();
        for (k, v) in entries.iter() {
            let line = serde_json::to_string(&CacheLine { k: k.clone(), v: v.clone() })
                .expect("cache line serializes");
            out.extend_from_slice(line.as_bytes());
            out.push(b'\n');
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)
    }
}

fn chat_key(req: &ChatRequest) -> String {
    format!("chat:{}", serde_json::to_string(req).expect("request serializes"))
}

fn logit_key(req: &LogitRequest) -> String {
    format!("logits:{}", serde_json::to_string(req).expect("request serializes"))
}

fn embed_key(model_id: &str, text: &str) -> String {
    format!(
        "embed:{}",
        serde_json::to_string(&(model_id, text)).expect("request serializes")
    )
}

pub struct CachedChat {
    pub inner: Arc<dyn ChatProvider>,
    pub store: Arc<CacheStore>,
}

impl CachedChat {
    pub fn new(inner: Arc<dyn ChatProvider>, store: Arc<CacheStore>) -> Self {
        Self { inner, store }
    }
}

impl ChatProvider for CachedChat {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        let key = chat_key(req);
        if let Some(hit) = self.store.get(&key) {
            return Ok(hit);
        }
        let response = self.inner.chat(req)?;
        self.store.put(key, response.clone());
        Ok(response)
    }
}

pub struct CachedLogits {
    pub inner: Arc<dyn LogitProvider>,
    pub store: Arc<CacheStore>,
}

impl CachedLogits {
    pub fn new(inner: Arc<dyn LogitProvider>, store: Arc<CacheStore>) -> Self {
        Self { inner, store }
    }
}

impl LogitProvider for CachedLogits {
    fn score_logits(&self, req: &LogitRequest) -> Result<LogitVector, ProviderError> {
        let key = logit_key(req);
        if let Some(hit) = self.store.get(&key) {
            let values: Vec<f64> = serde_json::from_str(&hit)
                .map_err(|e| ProviderError::Backend(format!("corrupt cache entry: {e}")))?;
            return Ok(LogitVector { values });
        }
        let response = self.inner.score_logits(req)?;
        self.store.put(key, serde_json::to_string(&response.values).expect("vector serializes"));
        Ok(response)
    }
}

pub struct CachedEmbedder {
    pub inner: Arc<dyn EmbeddingProvider>,
    pub store: Arc<CacheStore>,
}

impl CachedEmbedder {
    pub fn new(inner: Arc<dyn EmbeddingProvider>, store: Arc<CacheStore>) -> Self {
        Self { inner, store }
    }
}

impl EmbeddingProvider for CachedEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let key = embed_key(self.inner.model_id(), text);
        if let Some(hit) = self.store.get(&key) {
            let values: Vec<f64> = serde_json::from_str(&hit)
                .map_err(|e| ProviderError::Backend(format!("corrupt cache entry: {e}")))?;
            return Ok(EmbeddingVector { values, model_id: self.inner.model_id().to_string() });
        }
        let response = self.inner.embed(text)?;
        self.store.put(key, serde_json::to_string(&response.values).expect("vector serializes"));
        Ok(response)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn dimension(&self) -> usize {
        self.inner.dimension()
    }
}
