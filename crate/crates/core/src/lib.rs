//! Multi-view graph transformer for EEG emotion classification.
//!
//! Channels are tokens carrying their whole feature segment. Spatial
//! structure enters three ways: a learned embedding per brain region, a
//! centrality term derived from Gaussian-basis encodings of electrode
//! distances, and a per-head attention bias projected from the same
//! encodings. The block stack is applied several times with shared weights.

pub mod ablation;
pub mod attention;
pub mod checkpoint;
mod config;
mod error;
pub mod metrics;
mod model;
pub mod train;

pub use config::{Ablation, GraphNormMode, ModelConfig};
pub use error::{MvgtError, Result};
pub use model::{EncodingVars, Mvgt, SpatialValues};

/// Worker threads allowed for evaluation, from `MVGT_THREADS` (default 1).
pub fn thread_cap() -> usize {
    std::env::var("MVGT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}
