//! The trustworthiness score and its building blocks: Sobel edge maps,
//! windowed SSIM, edge SSIM, the db19 wavelet artifact energy, component
//! normalization and the weighted combination.

mod sobel;
mod ssim;
mod tws;
pub mod wavelet;

pub use sobel::{sobel_edge_map, SOBEL_MAX_MAGNITUDE};
pub use ssim::{gaussian_window, s_edge, ssim, ssim_with, SsimParams};
pub use tws::{
    ablation_sweep, normalize_components, rank_breakdowns, table_iv_grid, AblationRow,
    TwsBreakdown, TwsScorer, TwsWeights, WaveletNormalization, WeightConfig,
};
pub use wavelet::{dwt2_db19, s_wavelet_raw, WaveletConfig, WaveletPyramid};

use thiserror::Error;

use crate::embedding::EmbeddingError;
use crate::image::ImageError;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("sample set has no reference image")]
    MissingReference,
    #[error("empty input")]
    EmptyInput,
    #[error("invalid weights: {0}")]
    InvalidWeights(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error(transparent)]
    Image(#[from] ImageError),
}
