//! Taxonomy-aware contrastive learning at desk scale.
//!
//! The crate covers the concept hierarchy and its class similarity, the contrastive
//! objectives (InfoNCE, SupCon, PaCo and relational negative selection), a synthetic
//! hierarchical data generator, a small encoder trainer, linear probing, and
//! difference-hash de-duplication for benchmark curation.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix
//! the common choice.

pub mod dedup;
pub mod error;
pub mod losses;
pub mod probe;
pub mod sampler;
pub mod scalar;
pub mod synth;
pub mod taxonomy;
pub mod trainer;

pub use error::{Error, ErrorClass, Result};
pub use scalar::Scalar;

pub type SimilarityTable64 = taxonomy::SimilarityTable<f64>;
pub type SimilarityTable32 = taxonomy::SimilarityTable<f32>;
pub type EmbeddingBatch64 = losses::EmbeddingBatch<f64>;
pub type EmbeddingBatch32 = losses::EmbeddingBatch<f32>;
pub type LossResult64 = losses::LossResult<f64>;
pub type LossResult32 = losses::LossResult<f32>;
pub type ClassCenters64 = losses::ClassCenters<f64>;
pub type SynthDataset64 = synth::SynthDataset<f64>;
pub type Encoder64 = trainer::Encoder<f64>;
pub type Encoder32 = trainer::Encoder<f32>;
pub type LinearProbe64 = probe::LinearProbe<f64>;
