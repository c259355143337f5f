//! Score-guided breadth-first pathfinding. A frontier of partial
//! trajectories expands level by level; candidates are scored in batches
//! against an intent's milestones, trajectories meeting the progress
//! threshold are recorded, and only the top-K candidates keep growing.
//! Also renders trajectory summaries for storage.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intent::Intent;
use crate::providers::scripted::{INTENT_LINE, LIST_SEPARATOR, MILESTONES_LINE, STEPS_LINE};
use crate::providers::{ChatProvider, ChatRequest, LogitProvider, LogitRequest, ProviderError};
use crate::scoring::{self, trajectory_score, RankKey, TrajectoryScore};
use crate::utg::{ActionKind, Transition, Utg};
use crate::Scalar;

pub const DEFAULT_SCORE_TEMPERATURE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub screen_id: String,
    pub widget_id: String,
    pub action: ActionKind,
    pub to: String,
}

/// A loop-free path through the graph: `start`, then chained steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub start: String,
    pub steps: Vec<TrajectoryStep>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TrajectoryError {
    #[error("trajectory has no steps")]
    Empty,
    #[error("broken trajectory: {0}")]
    Broken(String),
}

impl Trajectory {
    pub fn at(start: &str) -> Self {
        Self { start: start.to_string(), steps: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Screen the trajectory currently ends on.
    pub fn end(&self) -> &str {
        self.steps.last().map_or(self.start.as_str(), |s| s.to.as_str())
    }

    /// All screens touched, in visit order (start first).
    pub fn visited(&self) -> Vec<&str> {
        std::iter::once(self.start.as_str())
            .chain(self.steps.iter().map(|s| s.to.as_str()))
            .collect()
    }

    /// Stable identity string; doubles as the lexicographic ranking
    /// tie-break, so equal-scoring trajectories order deterministically.
    pub fn path_id(&self) -> String {
        let mut id = self.start.clone();
        for step in &self.steps {
            id.push('>');
            id.push_str(&step_signature(step));
        }
        id
    }

    /// Checks chaining, transition existence, and loop-freedom.
    pub fn validate_against(&self, utg: &Utg) -> Result<(), TrajectoryError> {
        let mut seen = BTreeSet::new();
        seen.insert(self.start.as_str());
        let mut cursor = self.start.as_str();
        for (i, step) in self.steps.iter().enumerate() {
            if step.screen_id != cursor {
                return Err(TrajectoryError::Broken(format!(
                    "step {i} starts at {:?} but the trajectory is on {cursor:?}",
                    step.screen_id
                )));
            }
            let exists = utg.transitions.iter().any(|t| {
                t.from == step.screen_id
                    && t.widget_id == step.widget_id
                    && t.action == step.action
                    && t.to == step.to
            });
            if !exists {
                return Err(TrajectoryError::Broken(format!(
                    "step {i} ({}) matches no transition",
                    step_signature(step)
                )));
            }
            if !seen.insert(step.to.as_str()) {
                return Err(TrajectoryError::Broken(format!(
                    "step {i} revisits screen {:?}",
                    step.to
                )));
            }
            cursor = step.to.as_str();
        }
        Ok(())
    }
}

/// Canonical one-line rendering of a step, shared by scoring prompts and
/// oracle tables.
pub fn step_signature(step: &TrajectoryStep) -> String {
    format!("{}/{}/{}/{}", step.screen_id, step.widget_id, step.action.verb(), step.to)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    /// Minimum completed-milestone fraction for a trajectory to be recorded.
    pub threshold: f64,
    pub step_size: usize,
    pub max_depth: usize,
    pub top_k: usize,
    pub batch_size: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { threshold: 1.0, step_size: 1, max_depth: 10, top_k: 5, batch_size: 8 }
    }
}

impl SearchConfig {
    pub fn exhaustive() -> Self {
        Self { top_k: usize::MAX, ..Self::default() }
    }

    fn check(&self) -> Result<(), SearchError> {
        if self.step_size == 0 || self.max_depth == 0 || self.top_k == 0 || self.batch_size == 0 {
            return Err(SearchError::Config(
                "step_size, max_depth, top_k, and batch_size must be positive".into(),
            ));
        }
        if self.step_size > self.max_depth {
            return Err(SearchError::Config(format!(
                "step_size {} exceeds max_depth {}",
                self.step_size, self.max_depth
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(SearchError::Config(format!(
                "threshold {} must lie in [0, 1]",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Queue of partial trajectories plus the depth reached so far.
#[derive(Debug, Clone)]
pub struct SearchFrontier {
    pub queue: Vec<(String, Trajectory)>,
    pub depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredTrajectory {
    pub trajectory: Trajectory,
    pub score: TrajectoryScore<Scalar>,
}

impl ScoredTrajectory {
    fn rank_id(&self) -> String {
        self.trajectory.path_id()
    }
}

/// Ranking used everywhere trajectories compete for slots.
pub fn compare_scored(a: &ScoredTrajectory, b: &ScoredTrajectory) -> std::cmp::Ordering {
    let a_id = a.rank_id();
    let b_id = b.rank_id();
    scoring::compare(
        &RankKey { score: &a.score, path_len: a.trajectory.len(), path_id: &a_id },
        &RankKey { score: &b.score, path_len: b.trajectory.len(), path_id: &b_id },
    )
}

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid search configuration: {0}")]
    Config(String),
    #[error("start screen {0:?} does not exist")]
    UnknownStart(String),
    #[error("provider failure during search: {source}")]
    Provider {
        #[source]
        source: ProviderError,
        /// Frontier as it stood before the failing iteration.
        frontier: SearchFrontier,
        /// Trajectories already recorded as valid.
        valid: Vec<ScoredTrajectory>,
    },
}

/// Scores a candidate trajectory against an intent's milestones.
pub trait TrajectoryScorer: Send + Sync {
    fn score(
        &self,
        intent: &Intent,
        trajectory: &Trajectory,
    ) -> Result<TrajectoryScore<Scalar>, ProviderError>;
}

/// Prompts a logit backend for the completed-milestone count distribution.
pub struct ProviderScorer<'a> {
    pub logits: &'a dyn LogitProvider,
    pub temperature: f64,
}

impl<'a> ProviderScorer<'a> {
    pub fn new(logits: &'a dyn LogitProvider) -> Self {
        Self { logits, temperature: DEFAULT_SCORE_TEMPERATURE }
    }
}

pub fn scoring_prompt(intent: &Intent, trajectory: &Trajectory) -> String {
    let milestones = intent.milestones.join(LIST_SEPARATOR);
    let steps = trajectory
        .steps
        .iter()
        .map(step_signature)
        .collect::<Vec<_>>()
        .join(LIST_SEPARATOR);
    let m = intent.milestones.len();
    format!(
        "{INTENT_LINE}{}\n{MILESTONES_LINE}{milestones}\n{STEPS_LINE}{steps}\n\
         How many of the {m} milestones does this step sequence complete? \
         Answer with one number from 0 to {m}.",
        intent.goal_text
    )
}

impl TrajectoryScorer for ProviderScorer<'_> {
    fn score(
        &self,
        intent: &Intent,
        trajectory: &Trajectory,
    ) -> Result<TrajectoryScore<Scalar>, ProviderError> {
        let m = intent.milestones.len();
        let request = LogitRequest {
            prompt: scoring_prompt(intent, trajectory),
            answer_tokens: (0..=m).map(|i| i.to_string()).collect(),
        };
        let logits = self.logits.score_logits(&request)?;
        trajectory_score(&logits.values, m, self.temperature)
            .map_err(|e| ProviderError::Backend(format!("unscorable logits: {e}")))
    }
}

/// Expands every frontier entry by up to `step_size` transitions, dropping
/// screen revisits and deduplicating identical step sequences. Entries that
/// dead-end after at least one extension are kept as shorter candidates.
pub fn expand_frontier(frontier: &SearchFrontier, utg: &Utg, step_size: usize) -> Vec<Trajectory> {
    fn extend(utg: &Utg, trajectory: &Trajectory, remaining: usize, base_len: usize, out: &mut Vec<Trajectory>) {
        if remaining == 0 {
            out.push(trajectory.clone());
            return;
        }
        let visited: BTreeSet<&str> = trajectory.visited().into_iter().collect();
        let moves: Vec<&Transition> = utg
            .outgoing(trajectory.end())
            .into_iter()
            .filter(|t| !visited.contains(t.to.as_str()))
            .collect();
        if moves.is_empty() {
            if trajectory.len() > base_len {
                out.push(trajectory.clone());
            }
            return;
        }
        for t in moves {
            let mut next = trajectory.clone();
            next.steps.push(TrajectoryStep {
                screen_id: t.from.clone(),
                widget_id: t.widget_id.clone(),
                action: t.action.clone(),
                to: t.to.clone(),
            });
            extend(utg, &next, remaining - 1, base_len, out);
        }
    }

    let mut candidates = Vec::new();
    for (_, trajectory) in &frontier.queue {
        extend(utg, trajectory, step_size, trajectory.len(), &mut candidates);
    }
    let mut seen = BTreeSet::new();
    candidates.retain(|t| seen.insert(t.path_id()));
    candidates
}

type ScoreSlot = Option<Result<TrajectoryScore<Scalar>, ProviderError>>;

/// Scores candidates in `batch_size` chunks, each chunk on its own thread.
/// Results keep candidate order; the first error in candidate order wins.
fn score_batch(
    scorer: &dyn TrajectoryScorer,
    intent: &Intent,
    candidates: &[Trajectory],
    batch_size: usize,
) -> Result<Vec<TrajectoryScore<Scalar>>, ProviderError> {
    let slots: Mutex<Vec<ScoreSlot>> =
        Mutex::new((0..candidates.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for (chunk_index, chunk) in candidates.chunks(batch_size).enumerate() {
            let slots = &slots;
            scope.spawn(move || {
                for (offset, trajectory) in chunk.iter().enumerate() {
                    let result = scorer.score(intent, trajectory);
                    slots.lock().unwrap()[chunk_index * batch_size + offset] = Some(result);
                }
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|slot| slot.expect("every candidate scored"))
        .collect()
}

/// Batched, threshold-pruned, top-K breadth-first search.
///
/// Per iteration while the queue is non-empty and depth < max_depth: expand
/// the frontier by `step_size`, score all candidates, record those whose
/// completed-milestone fraction meets `threshold`, then keep only the top-K
/// candidates (valid ones included) as the next frontier. Returns recorded
/// trajectories in ranking order.
pub fn llm_bfs_search(
    intent: &Intent,
    utg: &Utg,
    start: &str,
    cfg: &SearchConfig,
    scorer: &dyn TrajectoryScorer,
) -> Result<Vec<ScoredTrajectory>, SearchError> {
    cfg.check()?;
    if utg.screen(start).is_none() {
        return Err(SearchError::UnknownStart(start.to_string()));
    }
    let m = intent.milestones.len();
    let mut frontier =
        SearchFrontier { queue: vec![(start.to_string(), Trajectory::at(start))], depth: 0 };
    let mut valid: Vec<ScoredTrajectory> = Vec::new();

    while !frontier.queue.is_empty() && frontier.depth < cfg.max_depth {
        let step = cfg.step_size.min(cfg.max_depth - frontier.depth);
        let candidates = expand_frontier(&frontier, utg, step);
        if candidates.is_empty() {
            frontier.queue.clear();
            break;
        }
        let scores = match score_batch(scorer, intent, &candidates, cfg.batch_size) {
            Ok(scores) => scores,
            Err(source) => return Err(SearchError::Provider { source, frontier, valid }),
        };
        let mut scored: Vec<ScoredTrajectory> = candidates
            .into_iter()
            .zip(scores)
            .map(|(trajectory, score)| ScoredTrajectory { trajectory, score })
            .collect();
        for s in &scored {
            if s.score.progress_count as f64 / m as f64 >= cfg.threshold {
                valid.push(s.clone());
            }
        }
        scored.sort_by(compare_scored);
        scored.truncate(cfg.top_k);
        frontier.queue = scored
            .into_iter()
            .map(|s| (s.trajectory.end().to_string(), s.trajectory))
            .collect();
        frontier.depth += step;
    }

    valid.sort_by(compare_scored);
    Ok(valid)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    /// True when the mechanical template replaced an unreachable provider.
    pub fallback: bool,
}

/// Ordered "tap X on Y" clauses; the deterministic floor for summaries.
pub fn mechanical_summary(t: &Trajectory, utg: &Utg) -> Result<String, TrajectoryError> {
    if t.is_empty() {
        return Err(TrajectoryError::Empty);
    }
    t.validate_against(utg)?;
    let clauses: Vec<String> = t
        .steps
        .iter()
        .enumerate()
        .map(|(i, step)| {
            let screen = utg.screen(&step.screen_id).expect("validated");
            let widget = screen.widget(&step.widget_id).expect("validated");
            let verb = match &step.action {
                ActionKind::Click => "tap".to_string(),
                ActionKind::Swipe { payload: Some(dir) } => format!("swipe {dir} on"),
                ActionKind::Swipe { payload: None } => "swipe".to_string(),
                ActionKind::TextInput { payload: Some(text) } => {
                    format!("type {text:?} into")
                }
                ActionKind::TextInput { payload: None } => "type into".to_string(),
            };
            format!("Step {}: {verb} '{}' on {}", i + 1, widget.description, screen.description)
        })
        .collect();
    Ok(clauses.join(" "))
}

/// Condenses a trajectory into one paragraph via the chat provider. When
/// the provider is unreachable or cannot serve the request, falls back to
/// the mechanical template and flags it; malformed responses and backend
/// rejections propagate.
pub fn summarize_trajectory(
    t: &Trajectory,
    utg: &Utg,
    chat: &dyn ChatProvider,
) -> Result<Summary, SummarizeError> {
    let clauses = mechanical_summary(t, utg)?;
    let request = ChatRequest::new(
        "You condense GUI action sequences into one concise paragraph. \
         Mention every step's widget in order.",
        format!("Summarize this action sequence:\n{clauses}"),
    );
    match chat.chat(&request) {
        Ok(text) => {
            let text = text.trim().replace('\n', " ");
            if text.is_empty() {
                return Err(SummarizeError::Provider(ProviderError::Backend(
                    "empty summary".into(),
                )));
            }
            Ok(Summary { text, fallback: false })
        }
        Err(ProviderError::Transport(_)) | Err(ProviderError::Unsupported(_)) => {
            Ok(Summary { text: clauses, fallback: true })
        }
        Err(e) => Err(SummarizeError::Provider(e)),
    }
}

#[derive(Debug, Error)]
pub enum SummarizeError {
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("summarization failed: {0}")]
    Provider(ProviderError),
}

/// One persisted search result line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResultRecord {
    pub intent_id: String,
    pub start: String,
    pub steps: Vec<TrajectoryStep>,
    pub progress_count: usize,
    pub progress_prob: f64,
    pub proximity: f64,
    pub distribution: Vec<f64>,
    pub summary: String,
    pub summary_fallback: bool,
}

impl SearchResultRecord {
    pub fn new(intent_id: &str, scored: &ScoredTrajectory, summary: &Summary) -> Self {
        Self {
            intent_id: intent_id.to_string(),
            start: scored.trajectory.start.clone(),
            steps: scored.trajectory.steps.clone(),
            progress_count: scored.score.progress_count,
            progress_prob: scored.score.progress_prob,
            proximity: scored.score.proximity,
            distribution: scored.score.distribution.probs().to_vec(),
            summary: summary.text.clone(),
            summary_fallback: summary.fallback,
        }
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory { start: self.start.clone(), steps: self.steps.clone() }
    }
}

pub fn write_search_results(path: &Path, records: &[SearchResultRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_search_results(path: &Path) -> std::io::Result<Vec<SearchResultRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            serde_json::from_str(line)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
        })
        .collect()
}
