//! Deterministic scripted providers: canned-table backends keyed on request
//! content, plus a milestone oracle that scores trajectory prompts against
//! designated step sequences. Pure functions of the request, so every test
//! and fixture run is reproducible.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::providers::{
    hash_embed::HashingEmbedder, ChatProvider, ChatRequest, LogitProvider, LogitRequest,
    LogitVector, ProviderError, ProviderSet, MISSING_LOGIT,
};

/// Line prefixes of the structured scoring prompt. The pathfinder renders
/// prompts with these markers; the milestone oracle parses them back.
pub const INTENT_LINE: &str = "INTENT: ";
pub const MILESTONES_LINE: &str = "MILESTONES: ";
pub const STEPS_LINE: &str = "STEPS: ";
pub const LIST_SEPARATOR: &str = " | ";

/// Logit spread per unit of distance from the matched milestone count.
/// Softmax at T=1 over these is sharply peaked but never one-hot.
const ORACLE_LOGIT_SLOPE: f64 = 2.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRule {
    /// Substring matched against `system_prompt + "\n" + user_prompt`.
    pub pattern: String,
    pub response: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedChatProvider {
    #[serde(default)]
    pub rules: Vec<ChatRule>,
    #[serde(default)]
    pub default_response: Option<String>,
    /// When set, an unmatched prompt without a default is a backend error.
    #[serde(default)]
    pub strict: bool,
}

impl ScriptedChatProvider {
    pub fn new(rules: Vec<(String, String)>) -> Self {
        Self {
            rules: rules
                .into_iter()
                .map(|(pattern, response)| ChatRule { pattern, response })
                .collect(),
            default_response: None,
            strict: true,
        }
    }

    pub fn with_default(mut self, response: &str) -> Self {
        self.default_response = Some(response.to_string());
        self.strict = false;
        self
    }
}

impl ChatProvider for ScriptedChatProvider {
    fn chat(&self, req: &ChatRequest) -> Result<String, ProviderError> {
        req.validate()?;
        let haystack = format!("{}\n{}", req.system_prompt, req.user_prompt);
        for rule in &self.rules {
            if haystack.contains(&rule.pattern) {
                return Ok(rule.response.clone());
            }
        }
        if let Some(default) = &self.default_response {
            return Ok(default.clone());
        }
        if self.strict {
            return Err(ProviderError::Backend(format!(
                "no scripted response matches prompt starting {:?}",
                truncate(&haystack, 80)
            )));
        }
        Ok(String::new())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LogitRule {
    /// Substring matched against the prompt.
    pub pattern: String,
    /// Per-answer-token logit; absent tokens score `MISSING_LOGIT`.
    pub values: BTreeMap<String, f64>,
}

/// Scores structured trajectory prompts by prefix-matching the STEPS line
/// against a designated step sequence per intent. The returned logits peak
/// at the number of leading steps that follow the designated sequence, so
/// softmax + argmax recovers that count exactly.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MilestoneOracle {
    /// Intent goal text → designated step signatures, in order.
    pub paths: BTreeMap<String, Vec<String>>,
}

impl MilestoneOracle {
    pub fn new(paths: BTreeMap<String, Vec<String>>) -> Self {
        Self { paths }
    }

    pub fn insert(&mut self, goal_text: &str, signatures: Vec<String>) {
        self.paths.insert(goal_text.to_string(), signatures);
    }

    fn matched_count(&self, goal: &str, steps: &[String]) -> Result<usize, ProviderError> {
        let designated = self.paths.get(goal).ok_or_else(|| {
            ProviderError::Backend(format!("no designated path for intent {goal:?}"))
        })?;
        let mut count = 0;
        for (step, want) in steps.iter().zip(designated.iter()) {
            if step != want {
                break;
            }
            count += 1;
        }
        Ok(count)
    }

    fn score(&self, prompt: &str, answer_tokens: &[String]) -> Result<LogitVector, ProviderError> {
        let goal = extract_line(prompt, INTENT_LINE).ok_or_else(|| {
            ProviderError::InvalidRequest("scoring prompt lacks an INTENT line".into())
        })?;
        let steps = extract_line(prompt, STEPS_LINE)
            .map(|line| split_list(&line))
            .unwrap_or_default();
        let count = self.matched_count(&goal, &steps)?.min(answer_tokens.len().saturating_sub(1));
        let values = (0..answer_tokens.len())
            .map(|j| -ORACLE_LOGIT_SLOPE * (j as f64 - count as f64).abs())
            .collect();
        Ok(LogitVector { values })
    }
}

fn extract_line(prompt: &str, prefix: &str) -> Option<String> {
    prompt
        .lines()
        .find_map(|line| line.strip_prefix(prefix))
        .map(|rest| rest.trim().to_string())
}

fn split_list(line: &str) -> Vec<String> {
    if line.is_empty() {
        return Vec::new();
    }
    line.split(LIST_SEPARATOR).map(|s| s.trim().to_string()).collect()
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScriptedLogitProvider {
    #[serde(default)]
    pub rules: Vec<LogitRule>,
    /// Consulted when no rule matches and the prompt carries an INTENT line.
    #[serde(default)]
    pub oracle: Option<MilestoneOracle>,
    #[serde(default)]
    pub strict: bool,
}

impl ScriptedLogitProvider {
    pub fn from_rules(rules: Vec<(String, BTreeMap<String, f64>)>) -> Self {
        Self {
            rules: rules
                .into_iter()
                .map(|(pattern, values)| LogitRule { pattern, values })
                .collect(),
            oracle: None,
            strict: true,
        }
    }

    pub fn from_oracle(oracle: MilestoneOracle) -> Self {
        Self { rules: Vec::new(), oracle: Some(oracle), strict: true }
    }
}

impl LogitProvider for ScriptedLogitProvider {
    fn score_logits(&self, req: &LogitRequest) -> Result<LogitVector, ProviderError> {
        req.validate()?;
        for rule in &self.rules {
            if req.prompt.contains(&rule.pattern) {
                let values = req
                    .answer_tokens
                    .iter()
                    .map(|t| rule.values.get(t).copied().unwrap_or(MISSING_LOGIT))
                    .collect();
                return Ok(LogitVector { values });
            }
        }
        if let Some(oracle) = &self.oracle {
            if req.prompt.contains(INTENT_LINE) {
                return oracle.score(&req.prompt, &req.answer_tokens);
            }
        }
        if self.strict {
            return Err(ProviderError::Backend(format!(
                "no scripted logits match prompt starting {:?}",
                truncate(&req.prompt, 80)
            )));
        }
        Ok(LogitVector { values: vec![MISSING_LOGIT; req.answer_tokens.len()] })
    }
}

/// Provider that fails every call; used to exercise fallback paths.
#[derive(Debug, Clone, Default)]
pub struct OfflineProvider;

impl ChatProvider for OfflineProvider {
    fn chat(&self, _req: &ChatRequest) -> Result<String, ProviderError> {
        Err(ProviderError::Transport("no backend configured".into()))
    }
}

impl LogitProvider for OfflineProvider {
    fn score_logits(&self, _req: &LogitRequest) -> Result<LogitVector, ProviderError> {
        Err(ProviderError::Transport("no backend configured".into()))
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct EmbedderConfig {
    #[serde(default = "default_dimension")]
    dimension: usize,
    #[serde(default = "default_seed")]
    seed: u64,
}

fn default_dimension() -> usize {
    crate::providers::hash_embed::DEFAULT_DIMENSION
}

fn default_seed() -> u64 {
    crate::providers::hash_embed::DEFAULT_SEED
}

/// On-disk fixture bundling canned tables for all three provider kinds.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProviderFixture {
    #[serde(default)]
    pub chat: ScriptedChatProvider,
    #[serde(default)]
    pub logits: ScriptedLogitProvider,
    #[serde(default)]
    embedder: EmbedderConfig,
}

impl ProviderFixture {
    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::InvalidRequest(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            ProviderError::InvalidRequest(format!("malformed fixture {}: {e}", path.display()))
        })
    }

    pub fn into_set(self) -> ProviderSet {
        ProviderSet {
            chat: Arc::new(self.chat),
            logits: Arc::new(self.logits),
            embedder: Arc::new(HashingEmbedder::new(self.embedder.dimension, self.embedder.seed)),
        }
    }
}

pub fn load_fixture(path: &Path) -> Result<ProviderSet, ProviderError> {
    Ok(ProviderFixture::load(path)?.into_set())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chat_returns_first_matching_rule() {
        let p = ScriptedChatProvider::new(vec![
            ("settings".into(), "Open Settings".into()),
            ("profile".into(), "Open Profile".into()),
        ]);
        let req = ChatRequest::new("assistant", "describe the profile settings page");
        assert_eq!(p.chat(&req).unwrap(), "Open Settings");
    }

    #[test]
    fn strict_chat_rejects_unknown_prompt() {
        let p = ScriptedChatProvider::new(vec![("known".into(), "ok".into())]);
        let req = ChatRequest::new("assistant", "something else");
        assert!(matches!(p.chat(&req), Err(ProviderError::Backend(_))));
    }

    #[test]
    fn default_response_covers_unknown_prompt() {
        let p = ScriptedChatProvider::new(vec![]).with_default("fallback");
        let req = ChatRequest::new("assistant", "anything");
        assert_eq!(p.chat(&req).unwrap(), "fallback");
    }

    #[test]
    fn logit_table_returns_canned_values() {
        let mut values = BTreeMap::new();
        values.insert("0".to_string(), 0.0);
        values.insert("1".to_string(), 1.0);
        values.insert("2".to_string(), 3.0);
        let p = ScriptedLogitProvider::from_rules(vec![("p".into(), values)]);
        let req = LogitRequest {
            prompt: "p".into(),
            answer_tokens: vec!["0".into(), "1".into(), "2".into()],
        };
        assert_eq!(p.score_logits(&req).unwrap().values, vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn absent_answer_token_gets_missing_logit() {
        let mut values = BTreeMap::new();
        values.insert("0".to_string(), 1.5);
        let p = ScriptedLogitProvider::from_rules(vec![("p".into(), values)]);
        let req = LogitRequest { prompt: "p".into(), answer_tokens: vec!["0".into(), "9".into()] };
        assert_eq!(p.score_logits(&req).unwrap().values, vec![1.5, MISSING_LOGIT]);
    }

    #[test]
    fn strict_logits_reject_unknown_prompt() {
        let p = ScriptedLogitProvider::from_rules(vec![]);
        let req = LogitRequest { prompt: "unseen".into(), answer_tokens: vec!["0".into()] };
        assert!(matches!(p.score_logits(&req), Err(ProviderError::Backend(_))));
    }

    fn oracle_request(goal: &str, steps: &[&str], m: usize) -> LogitRequest {
        let prompt = format!(
            "{INTENT_LINE}{goal}\n{MILESTONES_LINE}a | b\n{STEPS_LINE}{}",
            steps.join(LIST_SEPARATOR)
        );
        LogitRequest { prompt, answer_tokens: (0..=m).map(|i| i.to_string()).collect() }
    }

    #[test]
    fn oracle_counts_matching_prefix() {
        let mut oracle = MilestoneOracle::default();
        oracle.insert("open policy", vec!["s1".into(), "s2".into(), "s3".into()]);
        let p = ScriptedLogitProvider::from_oracle(oracle);

        for (steps, want) in [
            (vec![], 0usize),
            (vec!["s1"], 1),
            (vec!["s1", "s2"], 2),
            (vec!["s1", "s2", "s3"], 3),
            (vec!["s1", "sX"], 1),
            (vec!["sX", "s1"], 0),
        ] {
            let req = oracle_request("open policy", &steps, 3);
            let logits = p.score_logits(&req).unwrap();
            let argmax = logits
                .values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, want, "steps {steps:?}");
        }
    }

    #[test]
    fn oracle_caps_count_at_token_range() {
        let mut oracle = MilestoneOracle::default();
        oracle.insert("g", vec!["s1".into(), "s2".into(), "s3".into()]);
        let p = ScriptedLogitProvider::from_oracle(oracle);
        let req = oracle_request("g", &["s1", "s2", "s3"], 2);
        let logits = p.score_logits(&req).unwrap();
        assert_eq!(logits.values.len(), 3);
        assert_eq!(logits.values[2], 0.0);
    }

    #[test]
    fn oracle_rejects_unknown_intent() {
        let p = ScriptedLogitProvider::from_oracle(MilestoneOracle::default());
        let req = oracle_request("nobody", &[], 1);
        assert!(matches!(p.score_logits(&req), Err(ProviderError::Backend(_))));
    }

    #[test]
    fn fixture_round_trips_through_json() {
        let fixture = ProviderFixture {
            chat: ScriptedChatProvider::new(vec![("a".into(), "b".into())]),
            logits: ScriptedLogitProvider::from_rules(vec![(
                "p".into(),
                BTreeMap::from([("0".to_string(), 1.0)]),
            )]),
            embedder: EmbedderConfig { dimension: 32, seed: 5 },
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fixture.json");
        std::fs::write(&path, serde_json::to_string_pretty(&fixture).unwrap()).unwrap();
        let set = load_fixture(&path).unwrap();
        assert_eq!(set.embedder.dimension(), 32);
        let req = ChatRequest::new("s", "a");
        assert_eq!(set.chat.chat(&req).unwrap(), "b");
    }
}
