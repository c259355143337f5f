//! Executable environment over a UTG: runs policies against task suites and
//! reports success rate, decision accuracy, and average steps.
//!
//! Conventions the reports record in their headers:
//! - AS averages steps over successful episodes only.
//! - DA pools decisions across all episodes (not per-episode averages).
//! - A decision is correct iff it lies on SOME shortest path to the goal,
//!   not only on the task's reference path.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::knowledge::{query, KnowledgeDb, RetrievalHit};
use crate::pathfinder::{Trajectory, TrajectoryStep};
use crate::providers::EmbeddingProvider;
use crate::utg::{Screen, Transition, Utg, Widget};

pub const AS_CONVENTION: &str = "as_steps averages successful episodes only";
pub const DA_CONVENTION: &str = "da pools decisions across all episodes";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub instruction: String,
    pub start: String,
    pub goal: String,
    /// Oracle shortest path from `start` to `goal`.
    pub reference_path: Trajectory,
    pub step_budget: usize,
}

impl Task {
    pub fn check(&self, utg: &Utg) -> Result<(), String> {
        if utg.screen(&self.start).is_none() {
            return Err(format!("start screen {:?} not in graph", self.start));
        }
        if utg.screen(&self.goal).is_none() {
            return Err(format!("goal screen {:?} not in graph", self.goal));
        }
        if self.reference_path.start != self.start {
            return Err("reference path does not begin at the start screen".into());
        }
        if self.reference_path.end() != self.goal {
            return Err("reference path does not end at the goal screen".into());
        }
        self.reference_path
            .validate_against(utg)
            .map_err(|e| format!("reference path: {e}"))?;
        if self.step_budget == 0 {
            return Err("step budget must be positive".into());
        }
        if self.step_budget < self.reference_path.len() {
            return Err(format!(
                "step budget {} is below the reference length {}",
                self.step_budget,
                self.reference_path.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub screen_id: String,
    pub step: TrajectoryStep,
    /// True iff the move stays on some shortest path to the goal.
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub task_id: String,
    pub success: bool,
    pub steps_taken: usize,
    pub decisions: Vec<Decision>,
    pub retrieval_hits_used: usize,
    pub diagnostics: Option<String>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid task {task_id}: {reason}")]
    InvalidTask { task_id: String, reason: String },
    #[error("reports cover different suites: {0}")]
    SuiteMismatch(String),
    #[error("suite file I/O: {0}")]
    Io(String),
    #[error("suite line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct PolicyError(pub String);

/// One selectable move: a live transition plus the widget it goes through.
pub struct EnvOption<'a> {
    pub transition: &'a Transition,
    pub widget: Option<&'a Widget>,
}

pub struct StepContext<'a> {
    pub instruction: &'a str,
    pub screen: &'a Screen,
    pub options: &'a [EnvOption<'a>],
    /// Present iff the episode runs with a knowledge store attached.
    pub hints: &'a [RetrievalHit<'a>],
    pub steps_taken: usize,
    pub step_budget: usize,
}

pub trait Policy {
    fn name(&self) -> &str;
    fn begin_episode(&mut self, task: &Task);
    /// Picks an index into `ctx.options`.
    fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError>;
    /// Sees every applied step, including ones a wrapping policy chose.
    fn observe(&mut self, _step: &TrajectoryStep) {}
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn begin_episode(&mut self, task: &Task) {
        (**self).begin_episode(task)
    }
    fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError> {
        (**self).choose(ctx)
    }
    fn observe(&mut self, step: &TrajectoryStep) {
        (**self).observe(step)
    }
}

/// Knowledge store attachment for augmented runs.
pub struct Augmentation<'a> {
    pub db: &'a KnowledgeDb,
    pub embedder: &'a dyn EmbeddingProvider,
    pub k: usize,
}

pub fn run_episode(
    task: &Task,
    utg: &Utg,
    policy: &mut dyn Policy,
    aug: Option<&Augmentation>,
) -> Result<EpisodeResult, SimError> {
    task.check(utg).map_err(|reason| SimError::InvalidTask {
        task_id: task.task_id.clone(),
        reason,
    })?;

    let mut result = EpisodeResult {
        task_id: task.task_id.clone(),
        success: false,
        steps_taken: 0,
        decisions: Vec::new(),
        retrieval_hits_used: 0,
        diagnostics: None,
    };

    let hits = match aug {
        None => Vec::new(),
        Some(a) => match query(a.db, &task.instruction, a.k, a.embedder) {
            Ok(hits) => hits,
            Err(e) => {
                result.diagnostics = Some(format!("retrieval failed: {e}"));
                return Ok(result);
            }
        },
    };
    result.retrieval_hits_used = hits.len();

    policy.begin_episode(task);
    let dist = utg.distances_to(&task.goal);
    let mut current = task.start.clone();

    while current != task.goal && result.decisions.len() < task.step_budget {
        let screen = utg.screen(&current).expect("cursor stays on known screens");
        let transitions = utg.outgoing(&current);
        if transitions.is_empty() {
            result.diagnostics = Some(format!("dead end at {current:?}"));
            break;
        }
        let options: Vec<EnvOption> = transitions
            .iter()
            .map(|t| EnvOption { transition: t, widget: screen.widget(&t.widget_id) })
            .collect();
        let ctx = StepContext {
            instruction: &task.instruction,
            screen,
            options: &options,
            hints: &hits,
            steps_taken: result.decisions.len(),
            step_budget: task.step_budget,
        };
        let index = match policy.choose(&ctx) {
            Ok(i) if i < options.len() => i,
            Ok(i) => {
                result.diagnostics =
                    Some(format!("policy chose option {i} of {}", options.len()));
                break;
            }
            Err(e) => {
                result.diagnostics = Some(format!("policy error: {e}"));
                break;
            }
        };
        let chosen = options[index].transition;
        let correct = match (dist.get(&current), dist.get(&chosen.to)) {
            (Some(&here), Some(&there)) => there + 1 == here,
            _ => false,
        };
        let step = TrajectoryStep {
            screen_id: chosen.from.clone(),
            widget_id: chosen.widget_id.clone(),
            action: chosen.action.clone(),
            to: chosen.to.clone(),
        };
        policy.observe(&step);
        result.decisions.push(Decision { screen_id: current.clone(), step, correct });
        current = chosen.to.clone();
    }

    result.success = current == task.goal;
    result.steps_taken = result.decisions.len();
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRow {
    pub task_id: String,
    pub success: bool,
    pub steps_taken: usize,
    pub correct_decisions: usize,
    pub total_decisions: usize,
    pub retrieval_hits_used: usize,
    pub diagnostics: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub policy: String,
    pub conventions: Vec<String>,
    pub episode_count: usize,
    pub success_count: usize,
    pub correct_decisions: usize,
    pub total_decisions: usize,
    /// Percentage; meaningless when `sr_defined` is false (empty suite).
    pub sr: f64,
    pub sr_defined: bool,
    pub da: f64,
    pub da_defined: bool,
    pub as_steps: f64,
    pub as_defined: bool,
    pub rows: Vec<TaskRow>,
}

impl MetricsReport {
    pub fn from_episodes(policy: &str, episodes: &[EpisodeResult]) -> MetricsReport {
        let mut rows: Vec<TaskRow> = episodes
            .iter()
            .map(|e| TaskRow {
                task_id: e.task_id.clone(),
                success: e.success,
                steps_taken: e.steps_taken,
                correct_decisions: e.decisions.iter().filter(|d| d.correct).count(),
                total_decisions: e.decisions.len(),
                retrieval_hits_used: e.retrieval_hits_used,
                diagnostics: e.diagnostics.clone(),
            })
            .collect();
        rows.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        Self::from_rows(policy, rows)
    }

    /// Deterministic fold over per-task rows; aggregates are exactly
    /// recomputable from the rows.
    pub fn from_rows(policy: &str, rows: Vec<TaskRow>) -> MetricsReport {
        let episode_count = rows.len();
        let success_count = rows.iter().filter(|r| r.success).count();
        let correct_decisions: usize = rows.iter().map(|r| r.correct_decisions).sum();
        let total_decisions: usize = rows.iter().map(|r| r.total_decisions).sum();
        let success_steps: usize =
            rows.iter().filter(|r| r.success).map(|r| r.steps_taken).sum();
        let sr_defined = episode_count > 0;
        let da_defined = total_decisions > 0;
        let as_defined = success_count > 0;
        MetricsReport {
            policy: policy.to_string(),
            conventions: vec![AS_CONVENTION.to_string(), DA_CONVENTION.to_string()],
            episode_count,
            success_count,
            correct_decisions,
            total_decisions,
            sr: if sr_defined {
                100.0 * success_count as f64 / episode_count as f64
            } else {
                0.0
            },
            sr_defined,
            da: if da_defined {
                100.0 * correct_decisions as f64 / total_decisions as f64
            } else {
                0.0
            },
            da_defined,
            as_steps: if as_defined {
                success_steps as f64 / success_count as f64
            } else {
                0.0
            },
            as_defined,
            rows,
        }
    }
}

pub fn run_suite(
    tasks: &[Task],
    utg: &Utg,
    policy: &mut dyn Policy,
    aug: Option<&Augmentation>,
) -> Result<MetricsReport, SimError> {
    for task in tasks {
        task.check(utg).map_err(|reason| SimError::InvalidTask {
            task_id: task.task_id.clone(),
            reason,
        })?;
    }
    let mut episodes = Vec::with_capacity(tasks.len());
    for task in tasks {
        episodes.push(run_episode(task, utg, policy, aug)?);
    }
    Ok(MetricsReport::from_episodes(policy.name(), &episodes))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub baseline: String,
    pub candidate: String,
    /// candidate − baseline; positive SR/DA deltas and negative AS deltas
    /// favor the candidate. None when either side is undefined.
    pub sr_delta: Option<f64>,
    pub da_delta: Option<f64>,
    pub as_delta: Option<f64>,
}

pub fn compare_runs(a: &MetricsReport, b: &MetricsReport) -> Result<ComparisonReport, SimError> {
    let ids = |r: &MetricsReport| -> Vec<String> {
        r.rows.iter().map(|row| row.task_id.clone()).collect()
    };
    if ids(a) != ids(b) {
        return Err(SimError::SuiteMismatch(format!(
            "{} has {} tasks, {} has {}",
            a.policy,
            a.rows.len(),
            b.policy,
            b.rows.len()
        )));
    }
    let delta = |x_def: bool, x: f64, y_def: bool, y: f64| -> Option<f64> {
        (x_def && y_def).then_some(y - x)
    };
    Ok(ComparisonReport {
        baseline: a.policy.clone(),
        candidate: b.policy.clone(),
        sr_delta: delta(a.sr_defined, a.sr, b.sr_defined, b.sr),
        da_delta: delta(a.da_defined, a.da, b.da_defined, b.da),
        as_delta: delta(a.as_defined, a.as_steps, b.as_defined, b.as_steps),
    })
}

impl ComparisonReport {
    pub fn text(&self) -> String {
        let cell = |d: &Option<f64>| match d {
            Some(v) => format!("{v:+.2}"),
            None => "n/a".to_string(),
        };
        format!(
            "{} vs {}: SR {} | DA {} | AS {}\n",
            self.candidate,
            self.baseline,
            cell(&self.sr_delta),
            cell(&self.da_delta),
            cell(&self.as_delta),
        )
    }
}

/// Fixed-width table over one or more reports, columns SR↑ DA↑ AS↓.
pub fn render_reports(reports: &[&MetricsReport]) -> String {
    let mut out = String::new();
    out.push_str(&format!("{:<20} {:>8} {:>8} {:>8}\n", "policy", "SR^", "DA^", "ASv"));
    for r in reports {
        let cell = |defined: bool, v: f64| {
            if defined {
                format!("{v:.2}")
            } else {
                "n/a".to_string()
            }
        };
        out.push_str(&format!(
            "{:<20} {:>8} {:>8} {:>8}\n",
            r.policy,
            cell(r.sr_defined, r.sr),
            cell(r.da_defined, r.da),
            cell(r.as_defined, r.as_steps),
        ));
    }
    out
}

pub fn write_suite(tasks: &[Task], path: &Path) -> Result<(), SimError> {
    let mut out = String::new();
    for task in tasks {
        out.push_str(&serde_json::to_string(task).expect("task serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| SimError::Io(e.to_string()))
}

pub fn read_suite(path: &Path) -> Result<Vec<Task>, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(e.to_string()))?;
    let mut tasks = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task = serde_json::from_str(line)
            .map_err(|e| SimError::Parse { line: n + 1, reason: e.to_string() })?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// Always follows the task's reference path; fails loudly if the graph and
/// the reference disagree.
pub struct OraclePolicy {
    reference: Vec<TrajectoryStep>,
    cursor: usize,
}

impl OraclePolicy {
    pub fn new() -> Self {
        Self { reference: Vec::new(), cursor: 0 }
    }
}

impl Default for OraclePolicy {
    fn default() -> Self {
        Self::new()
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> &str {
        "oracle"
    }

    fn begin_episode(&mut self, task: &Task) {
        self.reference = task.reference_path.steps.clone();
        self.cursor = 0;
    }

    fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError> {
        let step = self.reference.get(self.cursor).ok_or_else(|| {
            PolicyError("reference path exhausted before the goal".into())
        })?;
        let index = ctx
            .options
            .iter()
            .position(|o| {
                o.transition.widget_id == step.widget_id
                    && o.transition.action == step.action
                    && o.transition.to == step.to
            })
            .ok_or_else(|| PolicyError(format!("reference step {} not available", self.cursor)))?;
        self.cursor += 1;
        Ok(index)
    }
}

/// Uniform random choice among the outgoing transitions.
pub struct RandomWalkPolicy {
    rng: ChaCha8Rng,
}

impl RandomWalkPolicy {
    pub fn seeded(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }
}

impl Policy for RandomWalkPolicy {
    fn name(&self) -> &str {
        "random-walk"
    }

    fn begin_episode(&mut self, _task: &Task) {}

    fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError> {
        let indices: Vec<usize> = (0..ctx.options.len()).collect();
        indices
            .choose(&mut self.rng)
            .copied()
            .ok_or_else(|| PolicyError("no options to choose from".into()))
    }
}

fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Unaugmented baseline: greedy token overlap between the instruction and
/// each option's widget description, preferring unvisited target screens,
/// with seeded random tie-breaking. It never reads target-screen
/// descriptions, so it can only follow hints surfaced on widgets.
pub struct GreedyPolicy {
    rng: ChaCha8Rng,
    instruction_tokens: BTreeSet<String>,
    visited: BTreeSet<String>,
}

impl GreedyPolicy {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            instruction_tokens: BTreeSet::new(),
            visited: BTreeSet::new(),
        }
    }
}

impl Policy for GreedyPolicy {
    fn name(&self) -> &str {
        "greedy-baseline"
    }

    fn begin_episode(&mut self, task: &Task) {
        self.instruction_tokens = tokenize(&task.instruction);
        self.visited = BTreeSet::from([task.start.clone()]);
    }

    fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError> {
        let rank = |o: &EnvOption| -> (usize, bool) {
            let overlap = o.widget.map_or(0, |w| {
                tokenize(&w.description)
                    .intersection(&self.instruction_tokens)
                    .count()
            });
            (overlap, !self.visited.contains(&o.transition.to))
        };
        let best = ctx.options.iter().map(rank).max().expect("options are non-empty");
        let tied: Vec<usize> = ctx
            .options
            .iter()
            .enumerate()
            .filter(|(_, o)| rank(o) == best)
            .map(|(i, _)| i)
            .collect();
        Ok(*tied.choose(&mut self.rng).expect("at least one best option"))
    }

    fn observe(&mut self, step: &TrajectoryStep) {
        self.visited.insert(step.to.clone());
    }
}

/// Knowledge-augmented policy: replays the top retrieved trajectory while it
/// matches the live graph, resynchronizing after detours, and defers to the
/// wrapped fallback policy for any step it cannot replay.
pub struct ReplayPolicy<F: Policy> {
    fallback: F,
    name: String,
    replay: Vec<TrajectoryStep>,
    primed: bool,
    cursor: usize,
}

impl<F: Policy> ReplayPolicy<F> {
    pub fn new(fallback: F) -> Self {
        let name = format!("kgrag-{}", fallback.name());
        Self { fallback, name, replay: Vec::new(), primed: false, cursor: 0 }
    }
}

impl<F: Policy> Policy for ReplayPolicy<F> {
    fn name(&self) -> &str {
        &self.name
    }

    fn begin_episode(&mut self, task: &Task) {
        self.fallback.begin_episode(task);
        self.replay.clear();
        self.primed = false;
        self.cursor = 0;
    }

    fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError> {
        if !self.primed {
            self.primed = true;
            if let Some(top) = ctx.hints.first() {
                self.replay = top.entry.trajectory.steps.clone();
            }
        }
        // Resync: the next replayable step is the first remaining one that
        // departs from the current screen.
        let here = ctx.screen.screen_id.as_str();
        if let Some(i) =
            (self.cursor..self.replay.len()).find(|&i| self.replay[i].screen_id == here)
        {
            let step = &self.replay[i];
            let live = ctx.options.iter().position(|o| {
                o.transition.widget_id == step.widget_id
                    && o.transition.action == step.action
                    && o.transition.to == step.to
            });
            if let Some(index) = live {
                self.cursor = i + 1;
                return Ok(index);
            }
        }
        self.fallback.choose(ctx)
    }

    fn observe(&mut self, step: &TrajectoryStep) {
        self.fallback.observe(step);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::{KnowledgeDb, KnowledgeEntry};
    use crate::providers::hash_embed::HashingEmbedder;
    use crate::utg::{generate_bench, ActionKind, AppMeta, BenchSpec};

    fn click_widget(id: &str, description: &str) -> Widget {
        Widget {
            widget_id: id.into(),
            description: description.into(),
            bounds: [0, 0, 10, 10],
            supported_actions: vec![ActionKind::Click],
        }
    }

    /// Chain c0→…→c{depth} where every non-goal screen has exactly
    /// `out_degree` options and only one makes progress.
    fn decoy_chain(depth: usize, out_degree: usize) -> Utg {
        let mut screens = Vec::new();
        let mut transitions = Vec::new();
        for i in 0..=depth {
            let id = format!("c{i}");
            let mut widgets = Vec::new();
            if i < depth {
                for w in 0..out_degree {
                    widgets.push(click_widget(&format!("w{w}"), &format!("button {w}")));
                    transitions.push(Transition {
                        from: id.clone(),
                        widget_id: format!("w{w}"),
                        action: ActionKind::Click,
                        to: if w == 0 { format!("c{}", i + 1) } else { "c0".to_string() },
                    });
                }
            } else {
                widgets.push(click_widget("w0", "terminal"));
            }
            screens.push(Screen {
                screen_id: id,
                description: format!("screen {i}"),
                widgets,
            });
        }
        let utg = Utg {
            meta: AppMeta {
                product_id: "decoy-chain".into(),
                app_name: "Decoy Chain".into(),
                package_name: "bench.decoy".into(),
            },
            entry_screen: "c0".into(),
            screens,
            transitions,
        };
        assert!(utg.validate().is_empty());
        utg
    }

    fn chain_task(utg: &Utg, depth: usize, budget: usize) -> Task {
        let steps = utg
            .shortest_path("c0", &format!("c{depth}"))
            .unwrap()
            .into_iter()
            .map(|t| TrajectoryStep {
                screen_id: t.from.clone(),
                widget_id: t.widget_id.clone(),
                action: t.action.clone(),
                to: t.to.clone(),
            })
            .collect();
        Task {
            task_id: "t0".into(),
            instruction: "reach the last screen".into(),
            start: "c0".into(),
            goal: format!("c{depth}"),
            reference_path: Trajectory { start: "c0".into(), steps },
            step_budget: budget,
        }
    }

    #[test]
    fn start_equals_goal_succeeds_in_zero_steps() {
        let utg = decoy_chain(2, 2);
        let task = Task {
            task_id: "t0".into(),
            instruction: "stay put".into(),
            start: "c0".into(),
            goal: "c0".into(),
            reference_path: Trajectory::at("c0"),
            step_budget: 1,
        };
        let mut policy = RandomWalkPolicy::seeded(1);
        let result = run_episode(&task, &utg, &mut policy, None).unwrap();
        assert!(result.success);
        assert_eq!(result.steps_taken, 0);
        assert!(result.decisions.is_empty());
    }

    #[test]
    fn oracle_policy_is_perfect_on_generated_suites() {
        let spec = BenchSpec {
            seed: 7,
            screen_count: 12,
            max_out_degree: 3,
            goal_depth: 4,
            fragmentation_ratio: 0.0,
            task_count: 5,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        let mut policy = OraclePolicy::new();
        let report = run_suite(&tasks, &utg, &mut policy, None).unwrap();
        assert_eq!(report.sr, 100.0);
        assert_eq!(report.da, 100.0);
        let mean_ref: f64 = tasks.iter().map(|t| t.reference_path.len() as f64).sum::<f64>()
            / tasks.len() as f64;
        assert_eq!(report.as_steps, mean_ref);
    }

    #[test]
    fn budget_exhaustion_is_a_failure() {
        let utg = decoy_chain(4, 3);
        let mut task = chain_task(&utg, 4, 4);
        task.step_budget = 4;
        let mut oracle = OraclePolicy::new();
        let ok = run_episode(&task, &utg, &mut oracle, None).unwrap();
        assert!(ok.success);
        assert_eq!(ok.steps_taken, 4);

        // A short budget is an invalid task; loosen the reference instead.
        let mut short = task.clone();
        short.step_budget = 3;
        short.reference_path.steps.truncate(3);
        assert!(matches!(
            run_episode(&short, &utg, &mut OraclePolicy::new(), None),
            Err(SimError::InvalidTask { .. })
        ));

        // Exhaust the budget with a policy that never progresses.
        struct Stuck;
        impl Policy for Stuck {
            fn name(&self) -> &str {
                "stuck"
            }
            fn begin_episode(&mut self, _t: &Task) {}
            fn choose(&mut self, ctx: &StepContext) -> Result<usize, PolicyError> {
                Ok(ctx.options.len() - 1)
            }
        }
        let failed = run_episode(&task, &utg, &mut Stuck, None).unwrap();
        assert!(!failed.success);
        assert_eq!(failed.steps_taken, 4);
        assert!(failed.decisions.iter().all(|d| !d.correct));
    }

    #[test]
    fn policy_errors_abort_as_failures_with_diagnostics() {
        let utg = decoy_chain(2, 2);
        let task = chain_task(&utg, 2, 4);

        struct Broken;
        impl Policy for Broken {
            fn name(&self) -> &str {
                "broken"
            }
            fn begin_episode(&mut self, _t: &Task) {}
            fn choose(&mut self, _ctx: &StepContext) -> Result<usize, PolicyError> {
                Err(PolicyError("simulated fault".into()))
            }
        }
        let result = run_episode(&task, &utg, &mut Broken, None).unwrap();
        assert!(!result.success);
        assert_eq!(result.steps_taken, 0);
        assert!(result.diagnostics.as_deref().unwrap().contains("simulated fault"));

        struct OutOfRange;
        impl Policy for OutOfRange {
            fn name(&self) -> &str {
                "oob"
            }
            fn begin_episode(&mut self, _t: &Task) {}
            fn choose(&mut self, _ctx: &StepContext) -> Result<usize, PolicyError> {
                Ok(999)
            }
        }
        let result = run_episode(&task, &utg, &mut OutOfRange, None).unwrap();
        assert!(!result.success);
        assert!(result.diagnostics.as_deref().unwrap().contains("999"));
    }

    #[test]
    fn metrics_follow_the_counting_arithmetic() {
        let correct = |n: usize, ok: usize| -> Vec<Decision> {
            (0..n)
                .map(|i| Decision {
                    screen_id: format!("s{i}"),
                    step: TrajectoryStep {
                        screen_id: format!("s{i}"),
                        widget_id: "w".into(),
                        action: ActionKind::Click,
                        to: format!("s{}", i + 1),
                    },
                    correct: i < ok,
                })
                .collect()
        };
        let episode = |id: &str, success: bool, total: usize, ok: usize| EpisodeResult {
            task_id: id.into(),
            success,
            steps_taken: total,
            decisions: correct(total, ok),
            retrieval_hits_used: 0,
            diagnostics: None,
        };
        // 3 of 4 succeed; decisions 17/20 correct.
        let episodes = vec![
            episode("a", true, 4, 4),
            episode("b", true, 4, 4),
            episode("c", true, 4, 4),
            episode("d", false, 8, 5),
        ];
        let report = MetricsReport::from_episodes("hand", &episodes);
        assert_eq!(report.sr, 75.0);
        assert_eq!(report.da, 85.0);
        assert_eq!(report.as_steps, 4.0);
        assert_eq!(report.total_decisions, 20);
        assert_eq!(report.correct_decisions, 17);
    }

    #[test]
    fn aggregates_recompute_exactly_from_rows() {
        let spec = BenchSpec {
            seed: 9,
            screen_count: 12,
            max_out_degree: 3,
            goal_depth: 3,
            fragmentation_ratio: 0.0,
            task_count: 6,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        let mut policy = GreedyPolicy::seeded(5);
        let report = run_suite(&tasks, &utg, &mut policy, None).unwrap();
        let again = MetricsReport::from_rows(&report.policy, report.rows.clone());
        assert_eq!(report, again);
    }

    #[test]
    fn empty_suite_reports_undefined_metrics() {
        let report = MetricsReport::from_episodes("none", &[]);
        assert_eq!(report.episode_count, 0);
        assert!(!report.sr_defined);
        assert!(!report.da_defined);
        assert!(!report.as_defined);
        assert!(render_reports(&[&report]).contains("n/a"));
    }

    #[test]
    fn suite_runs_are_reproducible() {
        let spec = BenchSpec {
            seed: 21,
            screen_count: 14,
            max_out_degree: 3,
            goal_depth: 4,
            fragmentation_ratio: 0.2,
            task_count: 6,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        let run = || {
            let mut policy = GreedyPolicy::seeded(11);
            run_suite(&tasks, &utg, &mut policy, None).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn random_walk_matches_the_analytic_success_probability() {
        let utg = decoy_chain(4, 3);
        let task = chain_task(&utg, 4, 4);
        let runs = 10_000;
        let mut successes = 0;
        for seed in 0..runs {
            let mut policy = RandomWalkPolicy::seeded(seed);
            if run_episode(&task, &utg, &mut policy, None).unwrap().success {
                successes += 1;
            }
        }
        let p = 1.0 / 81.0;
        let sigma = (p * (1.0 - p) / runs as f64).sqrt();
        let observed = successes as f64 / runs as f64;
        assert!(
            (observed - p).abs() <= 3.0 * sigma,
            "observed {observed}, expected {p} ± {}",
            3.0 * sigma
        );
    }

    #[test]
    fn replaying_stored_shortest_paths_is_optimal() {
        let embedder = HashingEmbedder::default();
        let spec = BenchSpec {
            seed: 11,
            screen_count: 14,
            max_out_degree: 3,
            goal_depth: 4,
            fragmentation_ratio: 0.2,
            task_count: 6,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        let entries: Vec<KnowledgeEntry> = tasks
            .iter()
            .map(|t| KnowledgeEntry {
                entry_id: t.task_id.clone(),
                intent_text: t.instruction.clone(),
                milestones: vec![],
                trajectory: t.reference_path.clone(),
                summary: String::new(),
                key: embedder.embed(&t.instruction).unwrap(),
                app_id: utg.meta.product_id.clone(),
            })
            .collect();
        let db = KnowledgeDb {
            model_id: embedder.model_id().to_string(),
            dimension: embedder.dimension(),
            entries,
        };
        for task in &tasks {
            let hits = query(&db, &task.instruction, 1, &embedder).unwrap();
            assert_eq!(hits[0].entry.entry_id, task.task_id, "retrieval must hit its own entry");
        }
        let aug = Augmentation { db: &db, embedder: &embedder, k: 1 };
        let mut policy = ReplayPolicy::new(GreedyPolicy::seeded(3));
        let report = run_suite(&tasks, &utg, &mut policy, Some(&aug)).unwrap();
        assert_eq!(report.sr, 100.0);
        assert_eq!(report.da, 100.0);
        let mean_ref: f64 = tasks.iter().map(|t| t.reference_path.len() as f64).sum::<f64>()
            / tasks.len() as f64;
        assert_eq!(report.as_steps, mean_ref);
        assert!(report.rows.iter().all(|r| r.retrieval_hits_used == 1));
    }

    #[test]
    fn stale_replay_steps_fall_back_and_resync() {
        let utg = decoy_chain(3, 2);
        let task = chain_task(&utg, 3, 5);
        // Stored trajectory detours through a transition the live graph
        // lacks for its middle step.
        let mut stored = task.reference_path.clone();
        stored.steps[1].widget_id = "ghost".into();
        let embedder = HashingEmbedder::default();
        let db = KnowledgeDb {
            model_id: embedder.model_id().to_string(),
            dimension: embedder.dimension(),
            entries: vec![KnowledgeEntry {
                entry_id: "e0".into(),
                intent_text: task.instruction.clone(),
                milestones: vec![],
                trajectory: stored,
                summary: String::new(),
                key: embedder.embed(&task.instruction).unwrap(),
                app_id: "decoy-chain".into(),
            }],
        };
        let aug = Augmentation { db: &db, embedder: &embedder, k: 1 };
        let mut policy = ReplayPolicy::new(GreedyPolicy::seeded(1));
        let result = run_episode(&task, &utg, &mut policy, Some(&aug)).unwrap();
        assert!(result.success, "diagnostics: {:?}", result.diagnostics);
        assert_eq!(result.steps_taken, 3);
    }

    #[test]
    fn comparisons_report_signed_deltas() {
        let row = |id: &str| TaskRow {
            task_id: id.into(),
            success: true,
            steps_taken: 4,
            correct_decisions: 4,
            total_decisions: 4,
            retrieval_hits_used: 0,
            diagnostics: None,
        };
        let mut a = MetricsReport::from_rows("baseline", vec![row("t0"), row("t1")]);
        let mut b = MetricsReport::from_rows("kgrag", vec![row("t0"), row("t1")]);

        let same = compare_runs(&a, &a).unwrap();
        assert_eq!(same.sr_delta, Some(0.0));
        assert_eq!(same.da_delta, Some(0.0));
        assert_eq!(same.as_delta, Some(0.0));

        a.sr = 66.94;
        b.sr = 75.80;
        a.as_steps = 4.49;
        b.as_steps = 4.10;
        let report = compare_runs(&a, &b).unwrap();
        assert!((report.sr_delta.unwrap() - 8.86).abs() < 1e-9);
        assert!((report.as_delta.unwrap() + 0.39).abs() < 1e-9);
        assert!(report.text().contains("+8.86"));
        assert!(report.text().contains("-0.39"));

        let c = MetricsReport::from_rows("other", vec![row("t0")]);
        assert!(matches!(compare_runs(&a, &c), Err(SimError::SuiteMismatch(_))));
    }

    #[test]
    fn suites_round_trip_through_jsonl() {
        let spec = BenchSpec {
            seed: 2,
            screen_count: 10,
            max_out_degree: 2,
            goal_depth: 3,
            fragmentation_ratio: 0.0,
            task_count: 4,
        };
        let (_, tasks) = generate_bench(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("suite.jsonl");
        write_suite(&tasks, &path).unwrap();
        let loaded = read_suite(&path).unwrap();
        assert_eq!(loaded, tasks);

        std::fs::write(&path, "{not json}\n").unwrap();
        assert!(matches!(read_suite(&path), Err(SimError::Parse { line: 1, .. })));
    }
}
