//! Cross-modal contrastive pre-training of point-cloud encoders.
//!
//! A point-cloud backbone is trained to agree with a frozen 2D image
//! backbone in a shared latent space, at two scales: global shape
//! embeddings and local, pose-conditioned region embeddings matched to
//! image patches through projective geometry. The crate is self-contained:
//! it ships its own synthetic shape generator, a deterministic software
//! splat renderer, a small reverse-mode gradient engine, a training loop
//! with bit-exact checkpoint/resume, and a linear-SVM probe for
//! evaluating the learned representations.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`geometry`]: normalization, cameras, point-to-pixel mapping, FPS, kNN
//! - [`render`]: point-splat renderer producing the paired 2D views
//! - [`dataio`]: file formats, synthetic dataset builder, batch assembly
//! - [`nn`]: tensors-on-`ndarray` layers with hand-written backward passes
//! - [`backbones`]: trainable mini-DGCNN and the frozen tiny CNN
//! - [`heads`]: projection heads into the shared latent space
//! - [`objective`]: local and global InfoNCE losses
//! - [`trainer`]: optimizer loop, checkpointing, backbone export
//! - [`eval`]: feature extraction, linear probe, correspondence heatmaps

pub mod backbones;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod heads;
pub mod nn;
pub mod objective;
pub mod render;
pub mod trainer;

pub use error::{Error, Result};

/// Environment variable that forces deterministic execution globally.
///
/// The implementation is deterministic by construction (fixed reduction
/// orders, explicit RNG streams), so the flag does not change numerics;
/// it additionally disables any buffering that could reorder log lines.
pub const DETERMINISTIC_ENV: &str = "PICPOINT_DETERMINISTIC";

/// True when deterministic mode is requested via the environment.
pub fn deterministic_mode() -> bool {
    std::env::var(DETERMINISTIC_ENV).map(|v| v == "1").unwrap_or(false)
}
