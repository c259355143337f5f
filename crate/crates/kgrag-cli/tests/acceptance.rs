//! Acceptance gate: one test per criterion, each printing a PASS line after
//! its assertions hold. Tolerances and frozen parameters live inline.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::time::{Duration, Instant};

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{assert_exit, fixture_for_bench, kgrag};
use kgrag_core::intent::Intent;
use kgrag_core::knowledge::{load_db, query, save_db, KeyMode, KnowledgeDb, KnowledgeEntry};
use kgrag_core::pathfinder::{
    compare_scored, llm_bfs_search, ProviderScorer, ScoredTrajectory, SearchConfig, Trajectory,
    TrajectoryScorer, TrajectoryStep,
};
use kgrag_core::pipeline::{run_build, BuildArtifacts, BuildConfig};
use kgrag_core::providers::hash_embed::HashingEmbedder;
use kgrag_core::providers::scripted::{MilestoneOracle, ProviderFixture, ScriptedLogitProvider};
use kgrag_core::providers::EmbeddingProvider;
use kgrag_core::scoring::{proximity_score, softmax_slice, ProbabilityDistribution, SoftmaxParams};
use kgrag_core::simulator::{
    run_suite, Augmentation, GreedyPolicy, MetricsReport, OraclePolicy, RandomWalkPolicy,
    ReplayPolicy, Task,
};
use kgrag_core::utg::{generate_bench, merge_benches, save_utg, BenchSpec, Utg};

#[test]
fn criterion_1_softmax_matches_direct_evaluator() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..1000 {
        let n = rng.random_range(2..=32);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-15.0..15.0)).collect();
        let start = rng.random_range(0..n - 1);
        let end = rng.random_range(start + 1..=n);
        let temperature = rng.random_range(0.2..5.0);
        let params = SoftmaxParams { start_ind: start, end_ind: end, temperature };

        let got = softmax_slice(&logits, &params).unwrap();
        let direct: Vec<f64> = {
            let exps: Vec<f64> =
                logits[start..end].iter().map(|v| (v / temperature).exp()).collect();
            let sum: f64 = exps.iter().sum();
            exps.iter().map(|z| z / sum).collect()
        };
        for (a, b) in got.probs().iter().zip(&direct) {
            assert!((a - b).abs() <= 1e-9, "softmax {a} vs direct {b}");
        }
        let sum: f64 = got.probs().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-9, "sums to {sum}");

        let shift = rng.random_range(-10.0..10.0);
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let also = softmax_slice(&shifted, &params).unwrap();
        for (a, b) in got.probs().iter().zip(also.probs()) {
            assert!((a - b).abs() <= 1e-9, "shift by {shift} moved {a} to {b}");
        }
    }
    assert!(started.elapsed() < Duration::from_secs(1), "took {:?}", started.elapsed());
    println!("PASS criterion 1: softmax oracle, 1000 cases within 1e-9");
}

#[test]
fn criterion_2_proximity_matches_brute_force_on_all_permutations() {
    let decreasing: [&[f64]; 3] = [
        &[0.5, 0.3, 0.2],
        &[0.4, 0.3, 0.2, 0.1],
        &[0.3, 0.25, 0.2, 0.15, 0.1],
    ];
    let brute = |probs: &[f64]| -> f64 {
        let n = probs.len();
        let mut ranked: Vec<usize> = (0..n).collect();
        ranked.sort_by(|&a, &b| probs[b].partial_cmp(&probs[a]).unwrap());
        let mut sum = 0i64;
        for (i, &r) in ranked.iter().enumerate() {
            let diff = (n - 1 - i) as i64 - r as i64;
            sum += diff * diff;
        }
        -(sum as f64)
    };
    let mut cases = 0;
    for values in decreasing {
        let mut ascending = values.to_vec();
        ascending.reverse();
        for perm in values.iter().copied().permutations(values.len()) {
            cases += 1;
            let score = proximity_score(&ProbabilityDistribution::new(perm.clone()).unwrap());
            assert_eq!(score, brute(&perm), "permutation {perm:?}");
            assert!(score <= 0.0);
            assert_eq!(score == 0.0, perm == ascending, "zero off ascending: {perm:?}");
        }
    }
    assert_eq!(cases, 150);
    println!("PASS criterion 2: proximity exact on all {cases} permutations");
}

/// Every loop-free step sequence of length 1..=max_depth from `start`.
fn enumerate_loop_free(utg: &Utg, start: &str, max_depth: usize) -> Vec<Trajectory> {
    fn go(utg: &Utg, current: &Trajectory, max_depth: usize, out: &mut Vec<Trajectory>) {
        if current.len() == max_depth {
            return;
        }
        let visited: BTreeSet<&str> = current.visited().into_iter().collect();
        for t in utg.outgoing(current.end()) {
            if visited.contains(t.to.as_str()) {
                continue;
            }
            let mut next = current.clone();
            next.steps.push(TrajectoryStep {
                screen_id: t.from.clone(),
                widget_id: t.widget_id.clone(),
                action: t.action.clone(),
                to: t.to.clone(),
            });
            out.push(next.clone());
            go(utg, &next, max_depth, out);
        }
    }
    let mut out = Vec::new();
    go(utg, &Trajectory::at(start), max_depth, &mut out);
    out
}

#[test]
fn criterion_3_search_equals_exhaustive_enumerator() {
    let started = Instant::now();
    let thresholds = [1.0, 0.5, 0.25];
    for i in 0..200u64 {
        let spec = BenchSpec {
            seed: 1000 + i,
            screen_count: 6 + (i as usize % 7),
            max_out_degree: 1 + (i as usize % 3),
            goal_depth: 2 + (i as usize % 3),
            fragmentation_ratio: if i % 2 == 0 { 0.0 } else { 0.25 },
            task_count: 1,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        let task = &tasks[0];
        let milestones: Vec<String> =
            task.reference_path.steps.iter().map(|s| format!("open {}", s.to)).collect();
        let intent = Intent {
            intent_id: format!("case-{i}"),
            source_screen: task.start.clone(),
            goal_text: task.instruction.clone(),
            milestones,
            entry_reachable: true,
        };
        let mut oracle = MilestoneOracle::default();
        oracle.insert(
            &task.instruction,
            task.reference_path.steps.iter().map(kgrag_core::pathfinder::step_signature).collect(),
        );
        let logits = ScriptedLogitProvider::from_oracle(oracle);
        let scorer = ProviderScorer::new(&logits);

        let cfg = SearchConfig {
            threshold: thresholds[i as usize % thresholds.len()],
            step_size: 1,
            max_depth: 6,
            top_k: usize::MAX,
            batch_size: 8,
        };
        let found = llm_bfs_search(&intent, &utg, &task.start, &cfg, &scorer).unwrap();

        let m = intent.milestones.len();
        let mut expected: Vec<ScoredTrajectory> = enumerate_loop_free(&utg, &task.start, 6)
            .into_iter()
            .map(|trajectory| {
                let score = scorer.score(&intent, &trajectory).unwrap();
                ScoredTrajectory { trajectory, score }
            })
            .filter(|s| s.score.progress_count as f64 / m as f64 >= cfg.threshold)
            .collect();
        expected.sort_by(compare_scored);
        assert!(!expected.is_empty(), "case {i} has no qualifying trajectory");
        assert_eq!(found, expected, "case {i} diverges from the enumerator");

        let pruned_cfg = SearchConfig { top_k: 5, ..cfg };
        let pruned = llm_bfs_search(&intent, &utg, &task.start, &pruned_cfg, &scorer).unwrap();
        let full_ids: BTreeSet<String> =
            expected.iter().map(|s| s.trajectory.path_id()).collect();
        assert!(
            pruned.iter().all(|s| full_ids.contains(&s.trajectory.path_id())),
            "case {i}: pruned result is not a subset"
        );
        let top_id = expected[0].trajectory.path_id();
        assert!(
            pruned.iter().any(|s| s.trajectory.path_id() == top_id),
            "case {i}: pruned result lost the top trajectory"
        );
    }
    assert!(started.elapsed() < Duration::from_secs(10), "took {:?}", started.elapsed());
    println!("PASS criterion 3: search equals enumerator on 200 graphs");
}

#[test]
fn criterion_4_retrieval_matches_brute_force_scan() {
    let embedder = HashingEmbedder::default();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let vocab: Vec<String> = (0..240).map(|i| format!("word{i:03}")).collect();
    let text = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(3..=8);
        (0..len)
            .map(|_| vocab[rng.random_range(0..vocab.len())].clone())
            .collect::<Vec<_>>()
            .join(" ")
    };

    let entries: Vec<KnowledgeEntry> = (0..1000)
        .map(|i| {
            let intent_text = text(&mut rng);
            KnowledgeEntry {
                entry_id: format!("e{i:04}"),
                intent_text: intent_text.clone(),
                milestones: vec![],
                trajectory: Trajectory::at("s0"),
                summary: String::new(),
                key: embedder.embed(&intent_text).unwrap(),
                app_id: "bulk".into(),
            }
        })
        .collect();
    let db = KnowledgeDb {
        model_id: embedder.model_id().to_string(),
        dimension: embedder.dimension(),
        entries,
    };

    let queries: Vec<String> = (0..50).map(|_| text(&mut rng)).collect();
    let k = 10;
    let brute = |db: &KnowledgeDb, q: &str| -> Vec<(String, f64)> {
        let probe = embedder.embed(q).unwrap();
        let mut hits: Vec<(String, f64)> = db
            .entries
            .iter()
            .map(|e| (e.entry_id.clone(), kgrag_core::num::cosine(&probe.values, &e.key.values)))
            .collect();
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
        hits.truncate(k);
        hits
    };

    let run_all = |db: &KnowledgeDb| -> Vec<Vec<(String, f64)>> {
        queries
            .iter()
            .map(|q| {
                query(db, q, k, &embedder)
                    .unwrap()
                    .into_iter()
                    .map(|h| (h.entry.entry_id.clone(), h.similarity))
                    .collect()
            })
            .collect()
    };

    let before = run_all(&db);
    for (q, got) in queries.iter().zip(&before) {
        let want = brute(&db, q);
        assert_eq!(got.len(), want.len());
        for ((gid, gsim), (wid, wsim)) in got.iter().zip(&want) {
            assert_eq!(gid, wid, "query {q:?}");
            assert!((gsim - wsim).abs() <= 1e-12, "query {q:?}: {gsim} vs {wsim}");
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bulk.db");
    save_db(&db, &path).unwrap();
    let reloaded = load_db(&path).unwrap();
    assert_eq!(run_all(&reloaded), before, "round trip changed results");
    println!("PASS criterion 4: retrieval exact on 1000 entries x 50 queries");
}

/// Frozen comparative-claim world: three generated apps of goal depth 4, 5,
/// and 6 merged into one 50-task suite.
fn merged_world() -> (Utg, Vec<Task>) {
    let mut parts = Vec::new();
    for (i, (depth, count)) in [(4usize, 17usize), (5, 17), (6, 16)].iter().enumerate() {
        let spec = BenchSpec {
            seed: 42 + i as u64,
            screen_count: 24,
            max_out_degree: 3,
            goal_depth: *depth,
            fragmentation_ratio: 0.2,
            task_count: *count,
        };
        let (utg, tasks) = generate_bench(&spec).unwrap();
        parts.push((format!("app{i}-"), utg, tasks));
    }
    merge_benches(parts).unwrap()
}

fn build_merged_store(utg: &Utg, tasks: &[Task], dir: &std::path::Path) -> KnowledgeDb {
    let fixture: ProviderFixture =
        serde_json::from_value(fixture_for_bench(utg, tasks)).unwrap();
    let cfg = BuildConfig {
        search: SearchConfig { max_depth: 8, ..SearchConfig::default() },
        per_screen_limit: 17,
        key_mode: KeyMode::IntentOnly,
    };
    let artifacts = BuildArtifacts::for_db(&dir.join("merged.db"));
    let report = run_build(utg, &fixture.into_set(), &cfg, &artifacts).unwrap();
    assert_eq!(report.entries, tasks.len());
    load_db(&artifacts.db).unwrap()
}

#[test]
fn criterion_5_augmented_policy_beats_the_baseline() {
    let started = Instant::now();
    let (utg, tasks) = merged_world();
    assert_eq!(tasks.len(), 50);
    let instructions: BTreeSet<&str> = tasks.iter().map(|t| t.instruction.as_str()).collect();
    assert_eq!(instructions.len(), 50, "instructions must be unambiguous");
    for task in &tasks {
        assert_eq!(task.step_budget, task.reference_path.len() + 2);
    }

    let dir = tempfile::tempdir().unwrap();
    let db = build_merged_store(&utg, &tasks, dir.path());
    let embedder = HashingEmbedder::default();
    let aug = Augmentation { db: &db, embedder: &embedder, k: 5 };
    let mut augmented = ReplayPolicy::new(GreedyPolicy::seeded(0));
    let augmented_report = run_suite(&tasks, &utg, &mut augmented, Some(&aug)).unwrap();

    let mean_ref: f64 =
        tasks.iter().map(|t| t.reference_path.len() as f64).sum::<f64>() / tasks.len() as f64;
    assert_eq!(augmented_report.sr, 100.0, "augmented success rate");
    assert_eq!(augmented_report.as_steps, mean_ref, "augmented steps, tolerance zero");

    let mut baseline = GreedyPolicy::seeded(0);
    let baseline_report = run_suite(&tasks, &utg, &mut baseline, None).unwrap();
    assert!(baseline_report.sr > 0.0, "baseline must succeed sometimes");
    assert!(
        baseline_report.sr <= 70.0,
        "baseline success rate {} above 70",
        baseline_report.sr
    );
    assert!(
        baseline_report.as_steps > augmented_report.as_steps,
        "baseline steps {} not above augmented {}",
        baseline_report.as_steps,
        augmented_report.as_steps
    );
    assert!(started.elapsed() < Duration::from_secs(30), "took {:?}", started.elapsed());
    println!(
        "PASS criterion 5: augmented SR {:.2} AS {:.3} vs baseline SR {:.2} AS {:.3}",
        augmented_report.sr,
        augmented_report.as_steps,
        baseline_report.sr,
        baseline_report.as_steps
    );
}

fn assert_self_consistent(report: &MetricsReport) {
    let rows = &report.rows;
    assert_eq!(report.episode_count, rows.len());
    let successes = rows.iter().filter(|r| r.success).count();
    assert_eq!(report.success_count, successes);
    let correct: usize = rows.iter().map(|r| r.correct_decisions).sum();
    let total: usize = rows.iter().map(|r| r.total_decisions).sum();
    assert_eq!(report.correct_decisions, correct);
    assert_eq!(report.total_decisions, total);

    assert_eq!(report.sr_defined, !rows.is_empty());
    if report.sr_defined {
        assert_eq!(report.sr, 100.0 * successes as f64 / rows.len() as f64);
    }
    assert_eq!(report.da_defined, total > 0);
    if report.da_defined {
        assert_eq!(report.da, 100.0 * correct as f64 / total as f64);
    }
    assert_eq!(report.as_defined, successes > 0);
    if report.as_defined {
        let steps: usize = rows.iter().filter(|r| r.success).map(|r| r.steps_taken).sum();
        assert_eq!(report.as_steps, steps as f64 / successes as f64);
    }
}

#[test]
fn criterion_6_metrics_recompute_exactly_from_rows() {
    let (utg, tasks) = merged_world();
    let dir = tempfile::tempdir().unwrap();
    let db = build_merged_store(&utg, &tasks, dir.path());
    let embedder = HashingEmbedder::default();
    let aug = Augmentation { db: &db, embedder: &embedder, k: 5 };

    let mut checked = 0;
    for report in [
        run_suite(&tasks, &utg, &mut GreedyPolicy::seeded(0), None).unwrap(),
        run_suite(&tasks, &utg, &mut RandomWalkPolicy::seeded(9), None).unwrap(),
        run_suite(&tasks, &utg, &mut OraclePolicy::new(), None).unwrap(),
        run_suite(&tasks, &utg, &mut ReplayPolicy::new(GreedyPolicy::seeded(0)), Some(&aug))
            .unwrap(),
        run_suite(&[], &utg, &mut OraclePolicy::new(), None).unwrap(),
    ] {
        assert_self_consistent(&report);
        checked += 1;
    }
    println!("PASS criterion 6: metrics self-consistent across {checked} runs");
}

#[test]
fn criterion_7_build_and_eval_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let spec = BenchSpec {
        seed: 42,
        screen_count: 14,
        max_out_degree: 3,
        goal_depth: 4,
        fragmentation_ratio: 0.2,
        task_count: 6,
    };
    let (utg, tasks) = generate_bench(&spec).unwrap();
    save_utg(&utg, &dir.path().join("bench.json")).unwrap();
    kgrag_core::simulator::write_suite(&tasks, &dir.path().join("suite.jsonl")).unwrap();
    fs::write(
        dir.path().join("fixture.json"),
        serde_json::to_string_pretty(&fixture_for_bench(&utg, &tasks)).unwrap(),
    )
    .unwrap();

    for db in ["one.db", "two.db"] {
        let out = kgrag(
            &[
                "build",
                "--utg",
                "bench.json",
                "--db",
                db,
                "--fixture",
                "fixture.json",
                "--per-screen",
                "6",
                "--seed",
                "42",
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    for suffix in ["", ".intents.jsonl", ".results.jsonl"] {
        assert_eq!(
            fs::read(dir.path().join(format!("one.db{suffix}"))).unwrap(),
            fs::read(dir.path().join(format!("two.db{suffix}"))).unwrap(),
            "build artifact one.db{suffix} differs"
        );
    }

    for out_dir in ["eval1", "eval2"] {
        let out = kgrag(
            &[
                "eval",
                "--suite",
                "suite.jsonl",
                "--utg",
                "bench.json",
                "--db",
                "one.db",
                "--compare",
                "--seed",
                "42",
                "--out",
                out_dir,
            ],
            dir.path(),
        );
        assert_exit(&out, 0);
    }
    let mut compared = 0;
    for entry in fs::read_dir(dir.path().join("eval1")).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(
            fs::read(dir.path().join("eval1").join(&name)).unwrap(),
            fs::read(dir.path().join("eval2").join(&name)).unwrap(),
            "eval artifact {name:?} differs"
        );
        compared += 1;
    }
    assert_eq!(compared, 6);
    println!("PASS criterion 7: build and eval artifacts byte-identical");
}
