//! UTG-driven navigation knowledge for GUI agents.
//!
//! This crate turns UI Transition Graphs (UTGs) into a vector knowledge base
//! and serves it back to a simulated agent:
//!
//! 1. [`utg`]: the graph data model, its JSON file format, validation, and a
//!    seeded synthetic benchmark generator.
//! 2. [`intent`]: per-screen intent generation and milestone decomposition
//!    through the provider layer.
//! 3. [`scoring`]: softmax over a logit slice, proximity scoring, and the
//!    trajectory ranking order.
//! 4. [`pathfinder`]: score-guided, threshold-pruned, top-K breadth-first
//!    search over the graph plus trajectory summarization.
//! 5. [`knowledge`]: the embedding-keyed store mapping intents to
//!    trajectories, with exact cosine top-K retrieval and checksummed
//!    persistence.
//! 6. [`simulator`]: replays the graph as an environment and reports
//!    Success Rate, Decision Accuracy, and Average Steps.
//! 7. [`providers`]: chat, logit, and embedding backends with scripted
//!    fixtures for deterministic runs, an HTTP adapter for real models, and
//!    a write-through response cache.
//! 8. [`pipeline`]: the offline build orchestration used by the CLI.
//!
//! Numeric kernels are generic over the scalar type (see [`num::Real`]);
//! the pipeline itself runs on [`Scalar`] = `f64`.

mod fnv;
pub mod intent;
pub mod knowledge;
pub mod num;
pub mod pathfinder;
pub mod pipeline;
pub mod providers;
pub mod scoring;
pub mod simulator;
pub mod utg;

/// Concrete scalar type used by the pipeline end to end.
pub type Scalar = f64;

pub use intent::Intent;
pub use knowledge::{KnowledgeDb, KnowledgeEntry, RetrievalHit};
pub use pathfinder::{ScoredTrajectory, SearchConfig, Trajectory, TrajectoryStep};
pub use providers::{ChatRequest, EmbeddingVector, LogitRequest, LogitVector, ProviderError};
pub use scoring::{ProbabilityDistribution, SoftmaxParams, TrajectoryScore};
pub use simulator::{EpisodeResult, MetricsReport, Task};
pub use utg::{ActionKind, AppMeta, BenchSpec, Screen, Transition, Utg, Widget};
