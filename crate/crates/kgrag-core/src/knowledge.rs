//! Embedding-keyed store mapping intents to trajectories, with exact cosine
//! top-K retrieval and checksummed single-file persistence.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fnv::fnv1a64;
use crate::intent::Intent;
use crate::num::cosine;
use crate::pathfinder::{compare_scored, ScoredTrajectory, SearchResultRecord, Trajectory};
use crate::providers::{EmbeddingProvider, EmbeddingVector, ProviderError};
use crate::scoring::{ProbabilityDistribution, TrajectoryScore};
use crate::utg::Utg;

pub const FORMAT_VERSION: u32 = 1;

/// What the entry key embeds. The default keeps the intent dominant while
/// folding in the trajectory summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyMode {
    #[default]
    IntentAndSummary,
    IntentOnly,
}

impl KeyMode {
    pub fn key_text(&self, intent_text: &str, summary: &str) -> String {
        match self {
            KeyMode::IntentAndSummary => format!("{intent_text}\n{summary}"),
            KeyMode::IntentOnly => intent_text.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub intent_text: String,
    pub milestones: Vec<String>,
    pub trajectory: Trajectory,
    pub summary: String,
    pub key: EmbeddingVector,
    pub app_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeDb {
    pub model_id: String,
    pub dimension: usize,
    pub entries: Vec<KnowledgeEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHit<'a> {
    pub entry: &'a KnowledgeEntry,
    pub similarity: f64,
}

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("result references unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("embedder returned dimension {got}, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("embedder model {embedder:?} does not match store model {db:?}")]
    ModelMismatch { db: String, embedder: String },
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("invalid entry {0}")]
    InvalidEntry(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("knowledge file I/O: {0}")]
    Io(String),
    #[error("unsupported knowledge file version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt knowledge file: {0}")]
    Corruption(String),
}

#[derive(Debug)]
pub struct BuildOutcome {
    pub db: KnowledgeDb,
    /// One line per intent that produced no valid trajectory.
    pub warnings: Vec<String>,
}

impl SearchResultRecord {
    /// Reconstructs the ranking score persisted on this record.
    pub fn score(&self) -> Result<TrajectoryScore<f64>, KnowledgeError> {
        Ok(TrajectoryScore {
            progress_count: self.progress_count,
            progress_prob: self.progress_prob,
            proximity: self.proximity,
            distribution: ProbabilityDistribution::new(self.distribution.clone())
                .map_err(|e| KnowledgeError::InvalidEntry(format!("bad distribution: {e}")))?,
        })
    }
}

/// Builds one entry per intent from that intent's best-ranked trajectory.
/// Intents without any valid trajectory are omitted and reported.
pub fn build_db(
    utg: &Utg,
    intents: &[Intent],
    results: &[SearchResultRecord],
    embedder: &dyn EmbeddingProvider,
    mode: KeyMode,
) -> Result<BuildOutcome, KnowledgeError> {
    let known: BTreeMap<&str, &Intent> =
        intents.iter().map(|i| (i.intent_id.as_str(), i)).collect();
    let mut best: BTreeMap<&str, (&SearchResultRecord, ScoredTrajectory)> = BTreeMap::new();
    for record in results {
        if !known.contains_key(record.intent_id.as_str()) {
            return Err(KnowledgeError::UnknownIntent(record.intent_id.clone()));
        }
        let scored = ScoredTrajectory { trajectory: record.trajectory(), score: record.score()? };
        match best.entry(record.intent_id.as_str()) {
            std::collections::btree_map::Entry::Vacant(slot) => {
                slot.insert((record, scored));
            }
            std::collections::btree_map::Entry::Occupied(mut slot) => {
                if compare_scored(&scored, &slot.get().1) == std::cmp::Ordering::Less {
                    slot.insert((record, scored));
                }
            }
        }
    }

    let dimension = embedder.dimension();
    let mut db = KnowledgeDb {
        model_id: embedder.model_id().to_string(),
        dimension,
        entries: Vec::new(),
    };
    let mut warnings = Vec::new();
    for intent in intents {
        let Some((record, scored)) = best.get(intent.intent_id.as_str()) else {
            warnings.push(format!(
                "intent {} ({:?}) has no valid trajectory; omitted",
                intent.intent_id, intent.goal_text
            ));
            continue;
        };
        scored
            .trajectory
            .validate_against(utg)
            .map_err(|e| KnowledgeError::InvalidEntry(format!("{}: {e}", intent.intent_id)))?;
        let key = embedder.embed(&mode.key_text(&intent.goal_text, &record.summary))?;
        if key.values.len() != dimension {
            return Err(KnowledgeError::DimensionMismatch {
                expected: dimension,
                got: key.values.len(),
            });
        }
        db.entries.push(KnowledgeEntry {
            entry_id: intent.intent_id.clone(),
            intent_text: intent.goal_text.clone(),
            milestones: intent.milestones.clone(),
            trajectory: scored.trajectory.clone(),
            summary: record.summary.clone(),
            key,
            app_id: utg.meta.product_id.clone(),
        });
    }
    Ok(BuildOutcome { db, warnings })
}

/// Exact top-k retrieval: brute-force cosine over all entries, sorted by
/// similarity descending with entry_id as the tie-break.
pub fn query<'a>(
    db: &'a KnowledgeDb,
    instruction: &str,
    k: usize,
    embedder: &dyn EmbeddingProvider,
) -> Result<Vec<RetrievalHit<'a>>, KnowledgeError> {
    if k == 0 {
        return Err(KnowledgeError::InvalidQuery("k must be positive".into()));
    }
    if embedder.model_id() != db.model_id {
        return Err(KnowledgeError::ModelMismatch {
            db: db.model_id.clone(),
            embedder: embedder.model_id().to_string(),
        });
    }
    if db.entries.is_empty() {
        return Ok(Vec::new());
    }
    let query_key = embedder.embed(instruction)?;
    let mut hits: Vec<RetrievalHit<'a>> = db
        .entries
        .iter()
        .map(|entry| RetrievalHit {
            entry,
            similarity: cosine(&query_key.values, &entry.key.values),
        })
        .collect();
    hits.sort_by(|a, b| {
        b.similarity
            .partial_cmp(&a.similarity)
            .expect("similarities are finite")
            .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
    });
    hits.truncate(k);
    Ok(hits)
}

#[derive(Debug, Serialize, Deserialize)]
struct DbHeader {
    format_version: u32,
    model_id: String,
    dimension: usize,
    entry_count: usize,
    /// FNV-1a 64 over the entry lines (with newlines), hex-encoded.
    checksum: String,
    /// Reserved for future index structures.
    index_meta: serde_json::Value,
}

fn entry_lines(db: &KnowledgeDb) -> String {
    let mut out = String::new();
    for entry in &db.entries {
        out.push_str(&serde_json::to_string(entry).expect("entry serializes"));
        out.push('\n');
    }
    out
}

fn checksum_of(lines: &str) -> String {
    format!("{:016x}", fnv1a64(lines.as_bytes()))
}

pub fn save_db(db: &KnowledgeDb, path: &Path) -> Result<(), KnowledgeError> {
    let lines = entry_lines(db);
    let header = DbHeader {
        format_version: FORMAT_VERSION,
        model_id: db.model_id.clone(),
        dimension: db.dimension,
        entry_count: db.entries.len(),
        checksum: checksum_of(&lines),
        index_meta: serde_json::Value::Null,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    out.push_str(&lines);
    std::fs::write(path, out).map_err(|e| KnowledgeError::Io(e.to_string()))
}

pub fn load_db(path: &Path) -> Result<KnowledgeDb, KnowledgeError> {
    let text = std::fs::read_to_string(path).map_err(|e| KnowledgeError::Io(e.to_string()))?;
    let mut lines = text.split_inclusive('\n');
    let header_line = lines
        .next()
        .ok_or_else(|| KnowledgeError::Corruption("file is empty".into()))?;
    let header: DbHeader = serde_json::from_str(header_line)
        .map_err(|e| KnowledgeError::Corruption(format!("unreadable header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(KnowledgeError::Version { found: header.format_version });
    }
    let body: String = lines.collect();
    let entry_lines: Vec<&str> = body.lines().filter(|l| !l.trim().is_empty()).collect();
    if entry_lines.len() != header.entry_count {
        return Err(KnowledgeError::Corruption(format!(
            "header promises {} entries, file has {}",
            header.entry_count,
            entry_lines.len()
        )));
    }
    if checksum_of(&body) != header.checksum {
        return Err(KnowledgeError::Corruption("checksum mismatch".into()));
    }
    let mut entries = Vec::with_capacity(entry_lines.len());
    for (n, line) in entry_lines.iter().enumerate() {
        let entry: KnowledgeEntry = serde_json::from_str(line)
            .map_err(|e| KnowledgeError::Corruption(format!("entry line {}: {e}", n + 1)))?;
        if entry.key.values.len() != header.dimension {
            return Err(KnowledgeError::Corruption(format!(
                "entry {} has dimension {}, header says {}",
                entry.entry_id,
                entry.key.values.len(),
                header.dimension
            )));
        }
        entries.push(entry);
    }
    Ok(KnowledgeDb { model_id: header.model_id, dimension: header.dimension, entries })
}
