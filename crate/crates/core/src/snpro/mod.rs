//! Supervised projection head for condition-aware embeddings.
//!
//! Sentence embeddings have their condition embedding subtracted, both sides
//! pass through one shared projection, and the cosine of the two projections
//! is regressed onto the gold rating rescaled to `[-1, 1]`.

pub mod checkpoint;
pub mod embeddings;
pub mod model;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use embeddings::{
    postprocess, read_embeddings, write_embeddings, EmbeddingHeader, EmbeddingRecord, EmbeddingSet,
    PairSet,
};
pub use model::{cosine, target_similarity, Gradients, Mode, ProjectionModel, Variant};
pub use train::{evaluate, gradient_check, train, EpochRecord, TrainConfig, TrainOutcome};
