//! Intent generation and milestone decomposition. Each screen is offered to
//! the chat provider as a source of plausible user goals; every goal is then
//! decomposed into the ordered milestones the pathfinder scores against.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::providers::{ChatProvider, ChatRequest, ProviderError};
use crate::utg::Utg;

pub const DEFAULT_PER_SCREEN_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub intent_id: String,
    pub source_screen: String,
    pub goal_text: String,
    /// Ordered subgoals; the scorer asks how many a trajectory completes.
    pub milestones: Vec<String>,
    /// Whether source_screen is reachable from the graph's entry screen.
    pub entry_reachable: bool,
}

impl Intent {
    pub fn check(&self) -> Result<(), IntentError> {
        if self.goal_text.is_empty() {
            return Err(IntentError::InvalidIntent(format!(
                "{}: goal_text is empty",
                self.intent_id
            )));
        }
        if self.milestones.is_empty() {
            return Err(IntentError::InvalidIntent(format!(
                "{}: no milestones",
                self.intent_id
            )));
        }
        let distinct: BTreeSet<&String> = self.milestones.iter().collect();
        if distinct.len() != self.milestones.len() {
            return Err(IntentError::InvalidIntent(format!(
                "{}: milestones repeat",
                self.intent_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IntentError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("cannot decompose {goal:?}: {reason}")]
    Decomposition { goal: String, reason: String },
    #[error("invalid intent {0}")]
    InvalidIntent(String),
    #[error("intent file error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Default)]
pub struct IntentBatch {
    pub intents: Vec<Intent>,
    /// Screens the provider returned nothing for.
    pub skipped_screens: Vec<String>,
}

/// Strips a list marker (`1.`, `2)`, `-`, `*`, `•`) from a line, if any.
fn strip_marker(line: &str) -> &str {
    let line = line.trim();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim();
    }
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')']) {
            return rest.trim();
        }
    }
    line
}

fn is_numbered(line: &str) -> bool {
    let line = line.trim();
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    digits > 0 && line[digits..].starts_with(['.', ')'])
}

fn is_bulleted(line: &str) -> bool {
    line.trim().starts_with(['-', '*', '•'])
}

/// Parses a provider response into ordered list items. Numbered items win
/// when present (prose around them is ignored), then bulleted items, then
/// one item per non-empty line.
pub fn parse_list(text: &str) -> Vec<String> {
    let lines: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let pick = |keep: fn(&str) -> bool| {
        lines
            .iter()
            .filter(|l| keep(l))
            .map(|l| strip_marker(l).to_string())
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
    };
    let numbered = pick(is_numbered);
    if !numbered.is_empty() {
        return numbered;
    }
    let bulleted = pick(is_bulleted);
    if !bulleted.is_empty() {
        return bulleted;
    }
    lines.into_iter().map(str::to_string).collect()
}

fn dedup_preserving_order(items: Vec<String>) -> Vec<String> {
    let mut seen = BTreeSet::new();
    items.into_iter().filter(|i| seen.insert(i.clone())).collect()
}

/// Asks the provider to break a goal into ordered milestones.
pub fn decompose_intent(goal_text: &str, chat: &dyn ChatProvider) -> Result<Vec<String>, IntentError> {
    if goal_text.is_empty() {
        return Err(IntentError::Decomposition {
            goal: goal_text.to_string(),
            reason: "goal text is empty".into(),
        });
    }
    let request = ChatRequest::new(
        "You break a user goal into the ordered milestones an agent must pass. \
         Reply with a numbered list, one milestone per line.",
        format!("Goal: {goal_text}"),
    );
    let response = chat.chat(&request)?;
    let milestones = dedup_preserving_order(parse_list(&response));
    if milestones.is_empty() {
        return Err(IntentError::Decomposition {
            goal: goal_text.to_string(),
            reason: "response contains no list items".into(),
        });
    }
    Ok(milestones)
}

fn normalized(goal: &str) -> String {
    goal.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Proposes up to `per_screen_limit` intents per screen and decomposes each.
/// Intents are deduplicated corpus-wide by normalized goal text; screens are
/// visited in screen_id order, so output is deterministic.
pub fn generate_intents(
    utg: &Utg,
    per_screen_limit: usize,
    chat: &dyn ChatProvider,
) -> Result<IntentBatch, IntentError> {
    let reachable = utg.distances_from(&utg.entry_screen);
    let mut screens: Vec<_> = utg.screens.iter().collect();
    screens.sort_by(|a, b| a.screen_id.cmp(&b.screen_id));

    let mut batch = IntentBatch::default();
    let mut seen_goals = BTreeSet::new();
    for screen in screens {
        let widget_lines: Vec<String> =
            screen.widgets.iter().map(|w| format!("- {}", w.description)).collect();
        let request = ChatRequest::new(
            "You propose plausible user goals for an app screen. \
             Reply with one short goal per line.",
            format!(
                "SCREEN: {}\nDESCRIPTION: {}\nWIDGETS:\n{}\nPropose up to {} user intents.",
                screen.screen_id,
                screen.description,
                widget_lines.join("\n"),
                per_screen_limit
            ),
        );
        let response = chat.chat(&request)?;
        let goals: Vec<String> = parse_list(&response)
            .into_iter()
            .take(per_screen_limit)
            .collect();
        if goals.is_empty() {
            batch.skipped_screens.push(screen.screen_id.clone());
            continue;
        }
        for goal in goals {
            if !seen_goals.insert(normalized(&goal)) {
                continue;
            }
            let milestones = decompose_intent(&goal, chat)?;
            let intent = Intent {
                intent_id: format!("{}-i{:02}", screen.screen_id, seen_goals.len()),
                source_screen: screen.screen_id.clone(),
                goal_text: goal,
                milestones,
                entry_reachable: reachable.contains_key(&screen.screen_id),
            };
            intent.check()?;
            batch.intents.push(intent);
        }
    }
    Ok(batch)
}

pub fn write_intents(path: &Path, intents: &[Intent]) -> Result<(), IntentError> {
    let mut out = String::new();
    for intent in intents {
        out.push_str(&serde_json::to_string(intent).expect("intent serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| IntentError::Io(e.to_string()))
}

pub fn read_intents(path: &Path) -> Result<Vec<Intent>, IntentError> {
    let text = std::fs::read_to_string(path).map_err(|e| IntentError::Io(e.to_string()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| serde_json::from_str(line).map_err(|e| IntentError::Io(e.to_string())))
        .collect()
}
