//! Refinement of video human-object interaction (HOI) predictions with
//! multiple chat-completion models.
//!
//! The pipeline takes per-frame relation scores from a base detector, asks
//! each configured model to score candidate triplets from three angles
//! (common sense, spatial layout, temporal change), lets the models debate
//! contested triplets in front of a judge, fuses everything back into the
//! base scores and evaluates Recall@K under the semi-constraint rule.
//!
//! Numeric code (`fusion`, `eval`, `cliploss`) is generic over [`Scalar`];
//! the aliases below pin the common instantiations.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod agents;
pub mod cliploss;
pub mod config;
pub mod debate;
pub mod eval;
pub mod fusion;
pub mod ingest;
pub mod model;
mod par;
pub mod pipeline;
pub mod prompt;
pub mod provider;
mod scalar;

pub use scalar::Scalar;

pub use config::RefinementConfig;
pub use model::{
    AgentScoreTable, AgentScores, BoundingBox, Components, FramePrediction, GroundTruthSet,
    PairId, PairKey, PairPrediction, RelationVocabulary, ScoreDomain, ScoreKey,
    VideoPredictionSet,
};

/// Fusion weights in double precision, the scale used by every file format.
pub type Weights = model::FusionWeights<f64>;
/// Fusion weights in single precision.
pub type WeightsF32 = model::FusionWeights<f32>;

pub type Mlp = cliploss::MlpParams<f64>;
pub type MlpF32 = cliploss::MlpParams<f32>;
pub type EmbeddingBatch = cliploss::EmbeddingBatch<f64>;
pub type EmbeddingBatchF32 = cliploss::EmbeddingBatch<f32>;
pub type Positive = eval::Positive<f64>;
