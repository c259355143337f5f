//! Offline build orchestration: intent generation, milestone decomposition,
//! guided search, summarization, and knowledge-store assembly, with
//! per-stage accounting. Stage failures leave earlier artifacts on disk.

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::intent::{generate_intents, write_intents};
use crate::knowledge::{build_db, save_db, KeyMode};
use crate::pathfinder::{
    llm_bfs_search, summarize_trajectory, write_search_results, ProviderScorer, SearchConfig,
    SearchResultRecord, SummarizeError,
};
use crate::providers::ProviderSet;
use crate::utg::Utg;

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub search: SearchConfig,
    pub per_screen_limit: usize,
    pub key_mode: KeyMode,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            search: SearchConfig::default(),
            per_screen_limit: 3,
            key_mode: KeyMode::default(),
        }
    }
}

/// Output paths. The side files persist even when a later stage fails,
/// making reruns resumable together with the provider cache.
#[derive(Debug, Clone)]
pub struct BuildArtifacts {
    pub db: PathBuf,
    pub intents: Option<PathBuf>,
    pub results: Option<PathBuf>,
}

impl BuildArtifacts {
    /// Standard layout: side files sit next to the store.
    pub fn for_db(db: &Path) -> Self {
        let side = |suffix: &str| {
            let mut name = db.file_name().map_or_else(String::new, |n| {
                n.to_string_lossy().into_owned()
            });
            name.push_str(suffix);
            Some(db.with_file_name(name))
        };
        Self {
            db: db.to_path_buf(),
            intents: side(".intents.jsonl"),
            results: side(".results.jsonl"),
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} stage failed: {message}")]
    Stage { stage: &'static str, message: String },
    #[error("{stage} stage I/O: {message}")]
    Io { stage: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BuildReport {
    pub screens: usize,
    pub skipped_screens: usize,
    pub intents: usize,
    pub milestones: usize,
    pub searched: usize,
    pub with_trajectory: usize,
    pub summary_fallbacks: usize,
    pub entries: usize,
    pub warnings: Vec<String>,
}

impl BuildReport {
    /// One printable line per stage.
    pub fn stage_lines(&self) -> Vec<String> {
        vec![
            format!(
                "intents: {} generated over {} screens ({} screens yielded none)",
                self.intents, self.screens, self.skipped_screens
            ),
            format!(
                "decompose: {} intents into {} milestones",
                self.intents, self.milestones
            ),
            format!(
                "search: {} intents searched, {} produced a trajectory",
                self.searched, self.with_trajectory
            ),
            format!(
                "summarize: {} summaries ({} mechanical fallbacks)",
                self.with_trajectory, self.summary_fallbacks
            ),
            format!("knowledge: {} entries stored", self.entries),
        ]
    }
}

pub fn run_build(
    utg: &Utg,
    providers: &ProviderSet,
    cfg: &BuildConfig,
    artifacts: &BuildArtifacts,
) -> Result<BuildReport, PipelineError> {
    let stage = |stage: &'static str| {
        move |e: &dyn std::fmt::Display| PipelineError::Stage { stage, message: e.to_string() }
    };

    // Intent generation decomposes each accepted goal in the same pass.
    let batch = generate_intents(utg, cfg.per_screen_limit, providers.chat.as_ref())
        .map_err(|e| stage("intents")(&e))?;
    let intents = batch.intents;
    let mut warnings: Vec<String> = batch
        .skipped_screens
        .iter()
        .map(|s| format!("screen {s} yielded no intents"))
        .collect();
    let milestones: usize = intents.iter().map(|i| i.milestones.len()).sum();
    if let Some(path) = &artifacts.intents {
        write_intents(path, &intents)
            .map_err(|e| PipelineError::Io { stage: "intents", message: e.to_string() })?;
    }

    let scorer = ProviderScorer::new(providers.logits.as_ref());
    let mut records: Vec<SearchResultRecord> = Vec::new();
    let mut with_trajectory = 0;
    let mut summary_fallbacks = 0;
    for intent in &intents {
        let ranked = llm_bfs_search(intent, utg, &intent.source_screen, &cfg.search, &scorer)
            .map_err(|e| stage("search")(&e))?;
        let Some(best) = ranked.first() else {
            warnings.push(format!(
                "intent {} found no trajectory above the threshold",
                intent.intent_id
            ));
            continue;
        };
        with_trajectory += 1;
        let summary = summarize_trajectory(&best.trajectory, utg, providers.chat.as_ref())
            .map_err(|e| match e {
                SummarizeError::Trajectory(t) => stage("summarize")(&t),
                SummarizeError::Provider(p) => stage("summarize")(&p),
            })?;
        if summary.fallback {
            summary_fallbacks += 1;
        }
        records.push(SearchResultRecord::new(&intent.intent_id, best, &summary));
    }
    if let Some(path) = &artifacts.results {
        write_search_results(path, &records)
            .map_err(|e| PipelineError::Io { stage: "search", message: e.to_string() })?;
    }

    let outcome = build_db(
        utg,
        &intents,
        &records,
        providers.embedder.as_ref(),
        cfg.key_mode,
    )
    .map_err(|e| stage("knowledge")(&e))?;
    warnings.extend(outcome.warnings);
    if outcome.db.entries.is_empty() {
        warnings.push("knowledge store is empty".into());
    }
    save_db(&outcome.db, &artifacts.db)
        .map_err(|e| PipelineError::Io { stage: "knowledge", message: e.to_string() })?;

    Ok(BuildReport {
        screens: utg.screens.len(),
        skipped_screens: batch.skipped_screens.len(),
        intents: intents.len(),
        milestones,
        searched: intents.len(),
        with_trajectory,
        summary_fallbacks,
        entries: outcome.db.entries.len(),
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::load_db;
    use crate::pathfinder::step_signature;
    use crate::providers::hash_embed::HashingEmbedder;
    use crate::providers::scripted::{
        MilestoneOracle, OfflineProvider, ScriptedChatProvider, ScriptedLogitProvider,
    };
    use crate::utg::{generate_bench, BenchSpec};
    use std::sync::Arc;

    /// Scripted providers that drive a full build over a generated graph:
    /// the entry screen proposes one goal per bench task, milestones are the
    /// designated step signatures, and the logit oracle scores prefixes of
    /// the designated paths.
    fn scripted_world() -> (Utg, ProviderSet) {
        let spec = BenchSpec {
            seed: 5,
            screen_count: 8,
            max_out_degree: 2,
            goal_depth: 3,
            fragmentation_ratio: 0.0,
            task_count: 2,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        let mut chat_rules: Vec<(String, String)> = Vec::new();
        chat_rules.push((
            format!("SCREEN: {}\n", utg.entry_screen),
            tasks
                .iter()
                .map(|t| format!("- {}", t.instruction))
                .collect::<Vec<_>>()
                .join("\n"),
        ));
        for screen in &utg.screens {
            if screen.screen_id != utg.entry_screen {
                chat_rules.push((format!("SCREEN: {}\n", screen.screen_id), String::new()));
            }
        }
        let mut oracle = MilestoneOracle::default();
        for task in &tasks {
            let signatures: Vec<String> =
                task.reference_path.steps.iter().map(step_signature).collect();
            chat_rules.push((
                format!("Goal: {}", task.instruction),
                signatures
                    .iter()
                    .enumerate()
                    .map(|(i, s)| format!("{}. {s}", i + 1))
                    .collect::<Vec<_>>()
                    .join("\n"),
            ));
            oracle.insert(&task.instruction, signatures);
        }
        chat_rules.push((
            "Summarize this action sequence:".into(),
            "Follow the designated screens in order to reach the goal.".into(),
        ));
        let providers = ProviderSet {
            chat: Arc::new(ScriptedChatProvider::new(chat_rules)),
            logits: Arc::new(ScriptedLogitProvider::from_oracle(oracle)),
            embedder: Arc::new(HashingEmbedder::default()),
        };
        (utg, providers)
    }

    #[test]
    fn build_produces_a_store_with_one_entry_per_goal() {
        let (utg, providers) = scripted_world();
        let dir = tempfile::tempdir().unwrap();
        let artifacts = BuildArtifacts::for_db(&dir.path().join("kb.db"));
        let report = run_build(&utg, &providers, &BuildConfig::default(), &artifacts).unwrap();
        assert_eq!(report.entries, 2);
        assert_eq!(report.with_trajectory, 2);
        assert!(artifacts.intents.as_ref().unwrap().exists());
        assert!(artifacts.results.as_ref().unwrap().exists());
        let db = load_db(&artifacts.db).unwrap();
        assert_eq!(db.entries.len(), 2);
        for entry in &db.entries {
            assert_eq!(entry.trajectory.len(), 3);
        }
        assert!(!report.stage_lines().is_empty());
    }

    #[test]
    fn builds_are_deterministic_byte_for_byte() {
        let (utg, providers) = scripted_world();
        let dir = tempfile::tempdir().unwrap();
        let once = |name: &str| {
            let artifacts = BuildArtifacts::for_db(&dir.path().join(name));
            run_build(&utg, &providers, &BuildConfig::default(), &artifacts).unwrap();
            std::fs::read(&artifacts.db).unwrap()
        };
        assert_eq!(once("a.db"), once("b.db"));
    }

    #[test]
    fn provider_failure_is_a_stage_error_with_partial_artifacts() {
        let (utg, providers) = scripted_world();
        let broken = ProviderSet {
            chat: providers.chat.clone(),
            logits: Arc::new(OfflineProvider),
            embedder: providers.embedder.clone(),
        };
        let dir = tempfile::tempdir().unwrap();
        let artifacts = BuildArtifacts::for_db(&dir.path().join("kb.db"));
        let err = run_build(&utg, &broken, &BuildConfig::default(), &artifacts).unwrap_err();
        assert!(matches!(err, PipelineError::Stage { stage: "search", .. }));
        assert!(artifacts.intents.as_ref().unwrap().exists());
        assert!(!artifacts.db.exists());
    }

    #[test]
    fn empty_graph_builds_an_empty_store_with_a_warning() {
        let (utg, providers) = scripted_world();
        let mut empty = utg.clone();
        empty.screens.clear();
        empty.transitions.clear();
        let dir = tempfile::tempdir().unwrap();
        let artifacts = BuildArtifacts::for_db(&dir.path().join("kb.db"));
        let report = run_build(&empty, &providers, &BuildConfig::default(), &artifacts).unwrap();
        assert_eq!(report.entries, 0);
        assert!(report.warnings.iter().any(|w| w.contains("empty")));
        assert!(load_db(&artifacts.db).unwrap().entries.is_empty());
    }

}
