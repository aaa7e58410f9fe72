//! Feature extractors: the trainable 3D backbone and the frozen
//! 2D backbone.

mod dgcnn;
mod tinycnn;

pub use dgcnn::{Dgcnn, DgcnnConfig, DgcnnCtx, LocalFeatures3d};
pub use tinycnn::{
    FeatureMap2d, TinyCnn, TINY_CNN_CHANNELS, TINY_CNN_SEED, WEIGHTS_FORMAT,
};
