//! Linked-change detection for code review.
//!
//! Given a target change, [`pipeline`] selects temporally nearby candidates,
//! [`features`] turns each (target, candidate) pair into six similarity
//! signals, and a [`classifier::ForestModel`] scores them. [`eval`] holds the
//! offline training and Recall@K / MRR harness.

pub mod classifier;
pub mod embedding;
pub mod eval;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod synthetic;

pub use classifier::{ForestModel, TrainConfig};
pub use embedding::{EmbeddingCache, EmbeddingProvider, FallbackEmbedder, HttpEmbedder};
pub use features::{FeatureVector, FEATURE_NAMES};
pub use model::{ChangeRecord, LinkLabel, WindowConfig, WindowMode};
pub use pipeline::{rank_candidates, score_pair, ProjectScope, RankRequest, RankedPrediction};
