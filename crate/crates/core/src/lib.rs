//! Bearing fault diagnosis from vibration signals.
//!
//! The pipeline turns raw accelerometer recordings into a rate-independent
//! frequency representation (fixed-duration segments, orthonormal DCT-II,
//! pad/cut to `n_f` components, norm scaling), pairs each query with a
//! fault-free reference recorded under the same working condition, and
//! classifies the stacked `[query, reference, residual]` channels with a
//! small multiscale channel-attention CNN.
//!
//! Modules:
//!
//! - [`signal`]: segmentation, DCT, discrete cosine normalization, unified representation
//! - [`reference`]: working-condition registry and fault-free reference store
//! - [`nn`]: tensors, layer kernels with analytic gradients, AdamW, plateau schedule, checkpoints
//! - [`fcn`]: the fault classification network and its training loop
//! - [`alignment`]: projection of classifier outputs into a word-embedding space
//! - [`synth`]: synthetic bearing signals and dataset building
//! - [`eval`]: metrics, ablations, energy-fraction analysis, feature dumps
//! - [`templates`]: task prompt templates and fault descriptions
//!
//! Data-parallel loops run on rayon when the `parallel` feature is enabled
//! (the default) and fall back to sequential iteration otherwise. Results are
//! bit-identical in both modes.

pub mod alignment;
pub mod config;
pub mod error;
pub mod eval;
pub mod fcn;
pub mod nn;
pub mod par;
pub mod reference;
pub mod signal;
pub mod synth;
pub mod templates;

pub use error::{Error, Result};

/// Number of fault classes: fault-free plus three locations at three severities.
pub const NUM_CLASSES: usize = 10;

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}
