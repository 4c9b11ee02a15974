//! Two-stage multimodal medical image fusion: an autoencoder trained for
//! reconstruction, parameter-free latent fusion, and an evaluation suite.

pub mod error;
pub mod fusion;
pub mod imaging;
pub mod losses;
pub mod metrics;
pub mod network;
pub mod pipeline;
mod util;

pub use candle_core::{DType, Device};
pub use error::{Error, Result};
