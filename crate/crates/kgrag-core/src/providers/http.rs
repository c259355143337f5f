//! Chat-completions-style HTTP backends. One endpoint serves chat and
//! per-token logprob scoring; a second serves embeddings. Base URLs and keys
//! come from `KGRAG_LLM_URL`/`KGRAG_LLM_KEY` and
//! `KGRAG_EMBED_URL`/`KGRAG_EMBED_KEY`.

use std::time::Duration;

use serde_json::{json, Value};

use crate::providers::{
    ChatProvider, ChatRequest, EmbeddingProvider, EmbeddingVector, LogitProvider, LogitRequest,
    LogitVector, ProviderError, MISSING_LOGIT,
};

pub const LLM_URL_VAR: &str = "KGRAG_LLM_URL";
pub const LLM_KEY_VAR: &str = "KGRAG_LLM_KEY";
pub const EMBED_URL_VAR: &str = "KGRAG_EMBED_URL";
pub const EMBED_KEY_VAR: &str = "KGRAG_EMBED_KEY";

const DEFAULT_TIMEOUT_SECS: u64 = 120;
const TOP_LOGPROBS: u32 = 20;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub base_url: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(base_url: &str, api_key: Option<&str>, model: &str) -> Self {
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            api_key: api_key.map(str::to_string),
            model: model.to_string(),
            timeout: Duration::from_secs(DEFAULT_TIMEOUT_SECS),
        }
    }

    /// Reads `url_var`/`key_var` through `lookup`; absent URL is an error.
    pub fn from_lookup(
        url_var: &str,
        key_var: &str,
        model: &str,
        lookup: impl Fn(&str) -> Option<String>,
    ) -> Result<Self, ProviderError> {
        let base_url = lookup(url_var).ok_or_else(|| {
            ProviderError::InvalidRequest(format!("environment variable {url_var} is not set"))
        })?;
        Ok(Self::new(&base_url, lookup(key_var).as_deref(), model))
    }

    pub fn llm_from_env(model: &str) -> Result<Self, ProviderError> {
        Self::from_lookup(LLM_URL_VAR, LLM_KEY_VAR, model, |k| std::env::var(k).ok())
    }

    pub fn embed_from_env(model: &str) -> Result<Self, ProviderError> {
        Self::from_lookup(EMBED_URL_VAR, EMBED_KEY_VAR, model, |k| std::env::var(k).ok())
    }

    fn endpoint(&self, path: &str) -> String {
        format!("{}/{}", self.base_url, path)
    }
}

fn post_json(cfg: &HttpConfig, path: &str, body: &Value) -> Result<Value, ProviderError> {
    let client = reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| ProviderError::Transport(e.to_string()))?;
    let mut req = client.post(cfg.endpoint(path)).json(body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| ProviderError::Transport(e.to_string()))?;
    let status = resp.status();
    let text = resp.text().map_err(|e| ProviderError::Transport(e.to_string()))?;
    if !status.is_success() {
        return Err(ProviderError::Backend(format!(
            "HTTP {status}: {}",
            text.chars().take(200).collect::<String>()
        )));
    }
    serde_json::from_str(&text)
        .map_err(|e| ProviderError::Backend(format!("malformed response body: {e}")))
}

pub(crate) fn parse_chat_response(body: &Value) -> Result<String, ProviderError> {
    let content = body
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Backend("response has no message content".into()))?;
    if content.is_empty() {
        return Err(ProviderError::Backend("backend returned an empty completion".into()));
    }
    Ok(content.to_string())
}

pub(crate) fn parse_logits_response(
    body: &Value,
    answer_tokens: &[String],
) -> Result<LogitVector, ProviderError> {
    let top = body
        .pointer("/choices/0/logprobs/content/0/top_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            ProviderError::Unsupported("backend does not expose token logprobs".into())
        })?;
    let mut values = vec![MISSING_LOGIT; answer_tokens.len()];
    for entry in top {
        let (Some(token), Some(logprob)) = (
            entry.get("token").and_then(Value::as_str),
            entry.get("logprob").and_then(Value::as_f64),
        ) else {
            continue;
        };
        if let Some(i) = answer_tokens.iter().position(|t| t == token) {
            values[i] = logprob;
        }
    }
    Ok(LogitVector { values })
}

pub(crate) fn parse_embed_response(body: &Value) -> Result<Vec<f64>, ProviderError> {
    let raw = body
        .pointer("/data/0/embedding")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::Backend("response has no embedding".into()))?;
    let values: Option<Vec<f64>> = raw.iter().map(Value::as_f64).collect();
    match values {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(ProviderError::Backend("embedding is empty or non-numeric".into())),
    }
}

/// Chat + logprob scoring over one chat-completions endpoint.
#[derive(Debug, Clone)]
pub struct HttpLlmClient {
    pub config: HttpConfig,
}

impl ChatProvider for HttpLlmClient {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        });
        parse_chat_response(&post_json(&self.config, "chat/completions", &body)?)
    }
}

impl LogitProvider for HttpLlmClient {
    fn score_logits(&self, req: &LogitRequest) -> Result<LogitVector, ProviderError> {
        req.validate()?;
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": 1,
            "temperature": 0.0,
            "logprobs": true,
            "top_logprobs": TOP_LOGPROBS,
        });
        parse_logits_response(
            &post_json(&self.config, "chat/completions", &body)?,
            &req.answer_tokens,
        )
    }
}

/// Embeddings endpoint client. The dimension is configured, not probed.
#[derive(Debug, Clone)]
pub struct HttpEmbedClient {
    pub config: HttpConfig,
    pub dimension: usize,
}

impl EmbeddingProvider for HttpEmbedClient {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        if text.is_empty() {
            return Err(ProviderError::InvalidRequest("empty text".into()));
        }
        let body = json!({ "model": self.config.model, "input": text });
        let values = parse_embed_response(&post_json(&self.config, "embeddings", &body)?)?;
        if values.len() != self.dimension {
            return Err(ProviderError::Backend(format!(
                "embedding dimension {} does not match configured {}",
                values.len(),
                self.dimension
            )));
        }
        Ok(EmbeddingVector { values, model_id: self.config.model.clone() })
    }

    fn model_id(&self) -> &str {
        &self.config.model
    }

    fn dimension(&self) -> usize {
        self.dimension
    }
}
