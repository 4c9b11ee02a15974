//! The asymmetric autoencoder: dilated residual attention encoder with a
//! gradient-operator edge branch, and a three-layer decoder.

mod blocks;
mod checkpoint;
mod config;
mod feature_map;
mod model;
mod params;

pub use blocks::{
    bilinear_upsample, gradient_xy, sobel_magnitude, Decoder, DilatedBranches, Drgo,
    GradientOperator, PyramidAttention, ResidualAttention,
};
pub use checkpoint::{read_tensors, write_tensors, TensorArchive};
pub use config::{DecoderConfig, EncoderConfig, ModelConfig};
pub use feature_map::FeatureMap;
pub use model::AutoEncoder;
pub use params::ParamStore;

/// Bumped whenever the parameter naming or checkpoint layout changes.
pub const CHECKPOINT_VERSION: &str = "medfuse-ckpt-1";
