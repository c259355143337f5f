//! Helpers shared by the CLI integration tests.
#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use kgrag_core::pathfinder::step_signature;
use kgrag_core::simulator::Task;
use kgrag_core::utg::Utg;
use serde_json::json;

pub fn kgrag(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgrag"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

pub fn stdout_of(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("stdout is UTF-8")
}

pub fn stderr_of(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("stderr is UTF-8")
}

pub fn assert_exit(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        stdout_of(out),
        stderr_of(out)
    );
}

/// Builds a provider fixture whose scripted answers reproduce a generated
/// benchmark: each task's start screen proposes the task instruction as a
/// goal, each goal decomposes into one milestone per reference step, and the
/// logit oracle designates the reference path.
pub fn fixture_for_bench(utg: &Utg, tasks: &[Task]) -> serde_json::Value {
    let mut by_start: std::collections::BTreeMap<&str, Vec<&Task>> = Default::default();
    for task in tasks {
        by_start.entry(task.start.as_str()).or_default().push(task);
    }
    let mut chat_rules = Vec::new();
    for screen in &utg.screens {
        let goal_lines: Vec<String> = by_start
            .get(screen.screen_id.as_str())
            .map(|ts| ts.iter().map(|t| format!("- {}", t.instruction)).collect())
            .unwrap_or_default();
        chat_rules.push(json!({
            "pattern": format!("SCREEN: {}\n", screen.screen_id),
            "response": goal_lines.join("\n"),
        }));
    }
    let mut paths = serde_json::Map::new();
    for task in tasks {
        let milestones: Vec<String> = task
            .reference_path
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{}. open {}", i + 1, s.to))
            .collect();
        chat_rules.push(json!({
            "pattern": format!("Goal: {}", task.instruction),
            "response": milestones.join("\n"),
        }));
        let signatures: Vec<String> =
            task.reference_path.steps.iter().map(step_signature).collect();
        paths.insert(task.instruction.clone(), json!(signatures));
    }
    chat_rules.push(json!({
        "pattern": "Summarize this action sequence",
        "response": "Replays the shortest recorded route.",
    }));
    json!({
        "chat": {"rules": chat_rules, "strict": true},
        "logits": {"oracle": {"paths": paths}, "strict": true},
        "embedder": {"dimension": 64, "seed": 17},
    })
}

pub fn fixtures_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}
