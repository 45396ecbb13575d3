//! Trustworthiness scoring and selection for diffusion super-resolution
//! samples.
//!
//! The crate ranks a set of candidate SR images of one scene with a weighted
//! score built from semantic similarity ([`embedding`]), edge-map SSIM and a
//! db19 wavelet artifact energy ([`metrics`]); drives prompt-ensembled
//! vision-language-model selection ([`vlm`]); and ships the statistics
//! ([`stats`]) and synthetic degradation ladders ([`harness`]) used to
//! validate all of it. [`cli`] wires these into the `trustsr` binary.

pub mod cli;
pub mod embedding;
pub mod harness;
pub mod image;
pub mod metrics;
pub mod sample_set;
pub mod stats;
pub mod vlm;

pub use embedding::{cosine_similarity, Embedding, EmbeddingError, EmbeddingProvider};
pub use image::{Image, ImageError};
pub use metrics::{MetricError, TwsBreakdown, TwsScorer, TwsWeights};
pub use sample_set::{Candidate, SampleSet};
