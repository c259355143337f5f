//! `kgrag`: validate UTG files, build knowledge stores from them, query the
//! stores, and evaluate navigation policies on task suites.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 validation
//! findings, 2 usage or I/O problems, 3 provider or pipeline stage failures.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use kgrag_core::knowledge::{load_db, query, KeyMode, KnowledgeDb, KnowledgeError, RetrievalHit};
use kgrag_core::pathfinder::{step_signature, SearchConfig};
use kgrag_core::pipeline::{run_build, BuildArtifacts, BuildConfig, PipelineError};
use kgrag_core::providers::cache::CacheStore;
use kgrag_core::providers::hash_embed::HashingEmbedder;
use kgrag_core::providers::http::{HttpConfig, HttpEmbedClient, HttpLlmClient};
use kgrag_core::providers::scripted::load_fixture;
use kgrag_core::providers::ProviderSet;
use kgrag_core::simulator::{
    compare_runs, read_suite, render_reports, run_suite, write_suite, Augmentation, GreedyPolicy,
    MetricsReport, OraclePolicy, Policy, RandomWalkPolicy, ReplayPolicy, SimError, Task,
};
use kgrag_core::utg::{
    generate_bench, load_utg, save_utg, unknown_keys, BenchSpec, Utg, UtgError,
};

const EXIT_FINDINGS: i32 = 1;
const EXIT_USAGE: i32 = 2;
const EXIT_STAGE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "kgrag",
    version,
    about = "UTG knowledge-store builder, retriever, and evaluation harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProviderKind {
    /// Scripted providers from a fixture file (deterministic).
    Fixture,
    /// OpenAI-compatible HTTP endpoints from environment variables.
    Http,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PolicyKind {
    /// Token-overlap greedy baseline with seeded tie-breaking.
    Greedy,
    /// Uniform random walk.
    Random,
    /// Follows each task's reference path.
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Check a UTG file against the format invariants.
    Validate {
        #[arg(long)]
        utg: PathBuf,
        /// Also report keys outside the canonical schema as findings.
        #[arg(long)]
        strict: bool,
    },
    /// Build a knowledge store from a UTG through the provider stack.
    Build {
        #[arg(long)]
        utg: PathBuf,
        /// Output store path; intents and search results land next to it.
        #[arg(long)]
        db: PathBuf,
        #[arg(long, value_enum, default_value_t = ProviderKind::Fixture)]
        providers: ProviderKind,
        /// Provider fixture file (required with --providers fixture).
        #[arg(long)]
        fixture: Option<PathBuf>,
        /// Response cache file; reruns skip already-answered calls.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long, default_value_t = SearchConfig::default().threshold)]
        threshold: f64,
        #[arg(long, default_value_t = SearchConfig::default().step_size)]
        step_size: usize,
        #[arg(long, default_value_t = SearchConfig::default().max_depth)]
        max_depth: usize,
        #[arg(long, default_value_t = SearchConfig::default().top_k)]
        top_k: usize,
        #[arg(long, default_value_t = SearchConfig::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = 3)]
        per_screen: usize,
        /// Key entries by intent text alone instead of intent plus summary.
        #[arg(long)]
        intent_only_keys: bool,
        /// Recorded in run output so runs can be reproduced.
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "gpt-4o-mini")]
        llm_model: String,
        #[arg(long, default_value = "text-embedding-3-small")]
        embed_model: String,
        #[arg(long, default_value_t = 1536)]
        embed_dimension: usize,
    },
    /// Retrieve the closest stored intents for an instruction.
    Query {
        /// A store file, or a directory whose *.db stores are merged.
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = 5)]
        k: usize,
        /// Print machine-readable JSON instead of text.
        #[arg(long)]
        json: bool,
        instruction: String,
    },
    /// Run policies over a task suite and write reports.
    Eval {
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        utg: PathBuf,
        /// Knowledge store for the augmented policy.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Run baseline and augmented policies and report deltas.
        #[arg(long)]
        compare: bool,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Retrieval depth per episode.
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, value_enum, default_value_t = PolicyKind::Greedy)]
        policy: PolicyKind,
        /// Report directory (JSON, text table, per-task CSV).
        #[arg(long, default_value = "eval-out")]
        out: PathBuf,
    },
    /// Generate a synthetic benchmark graph plus task suite.
    GenBench {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = 12)]
        screens: usize,
        #[arg(long, default_value_t = 3)]
        out_degree: usize,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 0.0)]
        fragmentation: f64,
        #[arg(long, default_value_t = 5)]
        tasks: usize,
        /// Output UTG path.
        #[arg(long)]
        utg: PathBuf,
        /// Output task suite path.
        #[arg(long)]
        suite: PathBuf,
    },
}

/// Failures that end the run, tagged with the exit code they map to.
enum CliError {
    Usage(String),
    Stage(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Stage(_) => EXIT_STAGE,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Stage(m) => m,
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Usage(e.to_string())
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    };
    std::process::exit(code);
}

fn run(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Validate { utg, strict } => cmd_validate(&utg, strict),
        Command::Build {
            utg,
            db,
            providers,
            fixture,
            cache,
            threshold,
            step_size,
            max_depth,
            top_k,
            batch_size,
            per_screen,
            intent_only_keys,
            seed,
            llm_model,
            embed_model,
            embed_dimension,
        } => {
            let search = SearchConfig { threshold, step_size, max_depth, top_k, batch_size };
            let cfg = BuildConfig {
                search,
                per_screen_limit: per_screen,
                key_mode: if intent_only_keys {
                    KeyMode::IntentOnly
                } else {
                    KeyMode::IntentAndSummary
                },
            };
            let http = HttpModels {
                llm_model,
                embed_model,
                embed_dimension,
            };
            cmd_build(&utg, &db, providers, fixture.as_deref(), cache.as_deref(), &cfg, seed, &http)
        }
        Command::Query { db, k, json, instruction } => cmd_query(&db, k, json, &instruction),
        Command::Eval { suite, utg, db, compare, seed, k, policy, out } => {
            cmd_eval(&suite, &utg, db.as_deref(), compare, seed, k, policy, &out)
        }
        Command::GenBench {
            seed,
            screens,
            out_degree,
            depth,
            fragmentation,
            tasks,
            utg,
            suite,
        } => {
            let spec = BenchSpec {
                seed,
                screen_count: screens,
                max_out_degree: out_degree,
                goal_depth: depth,
                fragmentation_ratio: fragmentation,
                task_count: tasks,
            };
            cmd_gen_bench(&spec, &utg, &suite)
        }
    }
}

fn cmd_validate(path: &Path, strict: bool) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("malformed JSON: {e}")))?;
    let unknown = unknown_keys(&value);
    let utg: Utg = serde_json::from_value(value)
        .map_err(|e| usage(format!("document does not match the UTG schema: {e}")))?;

    let mut findings = utg.validate().len();
    for violation in utg.validate() {
        println!("{violation}");
    }
    if strict {
        findings += unknown.len();
        for key in &unknown {
            println!("unknown_key at {key}: outside the canonical schema");
        }
    } else {
        for key in &unknown {
            eprintln!("warning: ignoring unknown key {key}");
        }
    }
    for warning in utg.warnings() {
        eprintln!("warning: {warning}");
    }
    if findings == 0 {
        println!(
            "ok: {} screens, {} transitions, entry {}",
            utg.screens.len(),
            utg.transitions.len(),
            utg.entry_screen
        );
        Ok(0)
    } else {
        Ok(EXIT_FINDINGS)
    }
}

struct HttpModels {
    llm_model: String,
    embed_model: String,
    embed_dimension: usize,
}

fn provider_set(
    kind: ProviderKind,
    fixture: Option<&Path>,
    http: &HttpModels,
) -> Result<ProviderSet, CliError> {
    match kind {
        ProviderKind::Fixture => {
            let path = fixture
                .ok_or_else(|| usage("--providers fixture requires --fixture <path>"))?;
            load_fixture(path).map_err(usage)
        }
        ProviderKind::Http => {
            let llm = HttpConfig::llm_from_env(&http.llm_model).map_err(usage)?;
            let embed = HttpConfig::embed_from_env(&http.embed_model).map_err(usage)?;
            Ok(ProviderSet {
                chat: Arc::new(HttpLlmClient { config: llm.clone() }),
                logits: Arc::new(HttpLlmClient { config: llm }),
                embedder: Arc::new(HttpEmbedClient {
                    config: embed,
                    dimension: http.embed_dimension,
                }),
            })
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_build(
    utg_path: &Path,
    db_path: &Path,
    kind: ProviderKind,
    fixture: Option<&Path>,
    cache: Option<&Path>,
    cfg: &BuildConfig,
    seed: u64,
    http: &HttpModels,
) -> Result<i32, CliError> {
    let utg = load_utg(utg_path).map_err(map_utg_error)?;
    let mut providers = provider_set(kind, fixture, http)?;
    let store = match cache {
        Some(path) => {
            let store = Arc::new(CacheStore::open(path).map_err(usage)?);
            providers = providers.with_cache(store.clone());
            Some(store)
        }
        None => None,
    };

    let artifacts = BuildArtifacts::for_db(db_path);
    let outcome = run_build(&utg, &providers, cfg, &artifacts);
    // The cache keeps every answered call even when a later stage fails.
    if let Some(store) = store {
        store.flush().map_err(usage)?;
    }
    let report = outcome.map_err(|e| match e {
        PipelineError::Stage { .. } => CliError::Stage(e.to_string()),
        PipelineError::Io { .. } => usage(e),
    })?;

    println!("seed: {seed}");
    for line in report.stage_lines() {
        println!("{line}");
    }
    println!("store: {}", artifacts.db.display());
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    Ok(0)
}

/// Store files under `path`: the file itself, or every `*.db` inside the
/// directory in name order.
fn collect_store_paths(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut found = Vec::new();
    let entries = std::fs::read_dir(path)
        .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    for entry in entries {
        let entry = entry.map_err(usage)?;
        let p = entry.path();
        if p.extension().is_some_and(|x| x == "db") {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(usage(format!("no .db stores in {}", path.display())));
    }
    Ok(found)
}

fn load_stores(path: &Path) -> Result<Vec<KnowledgeDb>, CliError> {
    let mut dbs = Vec::new();
    for store_path in collect_store_paths(path)? {
        dbs.push(load_db(&store_path).map_err(usage)?);
    }
    let (model, dimension) = (&dbs[0].model_id, dbs[0].dimension);
    for db in &dbs[1..] {
        if &db.model_id != model || db.dimension != dimension {
            return Err(usage(format!(
                "stores disagree on the embedding space ({model}/{dimension} vs {}/{})",
                db.model_id, db.dimension
            )));
        }
    }
    Ok(dbs)
}

fn embedder_for(model_id: &str) -> Result<HashingEmbedder, CliError> {
    HashingEmbedder::from_model_id(model_id).ok_or_else(|| {
        usage(format!(
            "store was built with embedder {model_id:?}, which this command cannot reconstruct"
        ))
    })
}

fn cmd_query(db_path: &Path, k: usize, json: bool, instruction: &str) -> Result<i32, CliError> {
    if k == 0 {
        return Err(usage("--k must be positive"));
    }
    if instruction.trim().is_empty() {
        return Err(usage("instruction must be non-empty"));
    }
    let dbs = load_stores(db_path)?;
    let embedder = embedder_for(&dbs[0].model_id)?;

    // Exhaustive per-store scans merged on (similarity desc, entry_id asc).
    let mut merged: Vec<(usize, RetrievalHit)> = Vec::new();
    for (i, db) in dbs.iter().enumerate() {
        let hits = query(db, instruction, k, &embedder).map_err(|e| match e {
            KnowledgeError::Provider(p) => CliError::Stage(p.to_string()),
            other => usage(other),
        })?;
        merged.extend(hits.into_iter().map(|h| (i, h)));
    }
    merged.sort_by(|(ia, a), (ib, b)| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("similarities are finite")
            .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
            .then_with(|| ia.cmp(ib))
    });
    merged.truncate(k);

    if json {
        let rows: Vec<serde_json::Value> = merged
            .iter()
            .map(|(_, h)| {
                serde_json::json!({
                    "similarity": h.similarity,
                    "entry_id": h.entry.entry_id,
                    "app_id": h.entry.app_id,
                    "intent": h.entry.intent_text,
                    "summary": h.entry.summary,
                    "steps": h.entry.trajectory.steps.iter().map(step_signature).collect::<Vec<_>>(),
                })
            })
            .collect();
        println!("{}", serde_json::to_string_pretty(&rows).expect("rows serialize"));
        return Ok(0);
    }
    for (_, hit) in &merged {
        println!("{:.6}  {}  {}", hit.similarity, hit.entry.entry_id, hit.entry.intent_text);
        if !hit.entry.summary.is_empty() {
            println!("          summary: {}", hit.entry.summary);
        }
        for (n, step) in hit.entry.trajectory.steps.iter().enumerate() {
            println!("          step {}: {}", n + 1, step_signature(step));
        }
    }
    Ok(0)
}

fn base_policy(kind: PolicyKind, seed: u64) -> Box<dyn Policy> {
    match kind {
        PolicyKind::Greedy => Box::new(GreedyPolicy::seeded(seed)),
        PolicyKind::Random => Box::new(RandomWalkPolicy::seeded(seed)),
        PolicyKind::Oracle => Box::new(OraclePolicy::new()),
    }
}

fn map_sim_error(e: SimError) -> CliError {
    usage(e)
}

fn map_utg_error(e: UtgError) -> CliError {
    usage(e)
}

fn rows_csv(reports: &[&MetricsReport]) -> String {
    let mut out = String::from(
        "policy,task_id,success,steps_taken,correct_decisions,total_decisions,retrieval_hits_used\n",
    );
    for report in reports {
        for row in &report.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                report.policy,
                row.task_id,
                row.success,
                row.steps_taken,
                row.correct_decisions,
                row.total_decisions,
                row.retrieval_hits_used
            ));
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn json_file(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    write_file(path, &text)
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    suite_path: &Path,
    utg_path: &Path,
    db_path: Option<&Path>,
    compare: bool,
    seed: u64,
    k: usize,
    policy: PolicyKind,
    out: &Path,
) -> Result<i32, CliError> {
    if k == 0 {
        return Err(usage("--k must be positive"));
    }
    if compare && db_path.is_none() {
        return Err(usage("--compare requires --db"));
    }
    let utg = load_utg(utg_path).map_err(map_utg_error)?;
    let tasks: Vec<Task> = read_suite(suite_path).map_err(map_sim_error)?;
    let db = match db_path {
        Some(p) => Some(load_db(p).map_err(usage)?),
        None => None,
    };

    let run_baseline = compare || db.is_none();
    let mut reports: Vec<MetricsReport> = Vec::new();
    if run_baseline {
        let mut baseline = base_policy(policy, seed);
        reports.push(run_suite(&tasks, &utg, &mut baseline, None).map_err(map_sim_error)?);
    }
    if let Some(db) = &db {
        let embedder = embedder_for(&db.model_id)?;
        let aug = Augmentation { db, embedder: &embedder, k };
        let mut augmented = ReplayPolicy::new(base_policy(policy, seed));
        reports.push(run_suite(&tasks, &utg, &mut augmented, Some(&aug)).map_err(map_sim_error)?);
    }

    std::fs::create_dir_all(out)
        .map_err(|e| usage(format!("cannot create {}: {e}", out.display())))?;
    let refs: Vec<&MetricsReport> = reports.iter().collect();
    let mut text = render_reports(&refs);
    for report in &reports {
        let name = format!("{}.json", report.policy);
        json_file(&out.join(name), report)?;
    }
    if reports.len() == 2 {
        let delta = compare_runs(&reports[0], &reports[1]).map_err(map_sim_error)?;
        json_file(&out.join("comparison.json"), &delta)?;
        text.push_str(&delta.text());
    }
    write_file(&out.join("report.txt"), &text)?;
    write_file(&out.join("rows.csv"), &rows_csv(&refs))?;
    json_file(
        &out.join("run_meta.json"),
        &serde_json::json!({
            "seed": seed,
            "k": k,
            "suite": suite_path.display().to_string(),
            "utg": utg_path.display().to_string(),
            "db": db_path.map(|p| p.display().to_string()),
            "policy": reports.last().map(|r| r.policy.clone()),
        }),
    )?;
    print!("{text}");
    println!("reports: {}", out.display());
    Ok(0)
}

fn cmd_gen_bench(spec: &BenchSpec, utg_path: &Path, suite_path: &Path) -> Result<i32, CliError> {
    let (utg, tasks) = generate_bench(spec).map_err(map_utg_error)?;
    save_utg(&utg, utg_path).map_err(map_utg_error)?;
    write_suite(&tasks, suite_path).map_err(map_sim_error)?;
    println!(
        "seed {}: {} screens, {} transitions, {} tasks (depth {})",
        spec.seed,
        utg.screens.len(),
        utg.transitions.len(),
        tasks.len(),
        spec.goal_depth
    );
    Ok(0)
}
