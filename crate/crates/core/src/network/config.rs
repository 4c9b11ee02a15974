use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::sha256_hex;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Output width of the stem convolution ("shallow features").
    pub shallow_channels: usize,
    /// Output width of each dilated branch.
    pub branch_channels: usize,
    pub dilation_rates: Vec<usize>,
    /// Number of stacked 3x3 convolutions in each pyramid path.
    pub pyramid_depths: Vec<usize>,
    pub pyramid_channels: usize,
    pub attention_downsample_factor: usize,
    /// Convolutions in the residual attention trunk.
    pub attention_trunk_depth: usize,
    pub residual_stages: usize,
    pub pyramid_stages: usize,
    pub leaky_slope: f64,
    pub latent_channels: usize,
    pub use_drgo: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            shallow_channels: 32,
            branch_channels: 32,
            dilation_rates: vec![1, 3, 5],
            pyramid_depths: vec![1, 2, 3],
            pyramid_channels: 44,
            attention_downsample_factor: 2,
            attention_trunk_depth: 2,
            residual_stages: 1,
            pyramid_stages: 1,
            leaky_slope: 0.2,
            latent_channels: 64,
            use_drgo: true,
        }
    }
}

impl EncoderConfig {
    /// Channels after the dilated branches are concatenated.
    pub fn concat_channels(&self) -> usize {
        self.branch_channels * self.dilation_rates.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Widths of the two hidden layers; the third layer maps to one channel.
    pub hidden_channels: [usize; 2],
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            hidden_channels: [32, 16],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl ModelConfig {
    /// A narrow variant for smoke tests and CPU-only experiments (~25k parameters).
    pub fn compact() -> Self {
        Self {
            encoder: EncoderConfig {
                shallow_channels: 8,
                branch_channels: 8,
                pyramid_channels: 8,
                latent_channels: 16,
                ..EncoderConfig::default()
            },
            decoder: DecoderConfig {
                hidden_channels: [16, 8],
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        let positive = [
            ("shallow_channels", e.shallow_channels),
            ("branch_channels", e.branch_channels),
            ("pyramid_channels", e.pyramid_channels),
            ("attention_downsample_factor", e.attention_downsample_factor),
            ("attention_trunk_depth", e.attention_trunk_depth),
            ("latent_channels", e.latent_channels),
            ("decoder.hidden_channels[0]", self.decoder.hidden_channels[0]),
            ("decoder.hidden_channels[1]", self.decoder.hidden_channels[1]),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if e.dilation_rates.is_empty() || e.dilation_rates.contains(&0) {
            return Err(Error::Config("dilation_rates must be non-empty and positive".into()));
        }
        if e.pyramid_depths.is_empty() || e.pyramid_depths.contains(&0) {
            return Err(Error::Config("pyramid_depths must be non-empty and positive".into()));
        }
        if e.pyramid_stages == 0 {
            return Err(Error::Config("pyramid_stages must be at least 1".into()));
        }
        if !(e.leaky_slope.is_finite() && e.leaky_slope >= 0.0) {
            return Err(Error::Config("leaky_slope must be a finite non-negative number".into()));
        }
        Ok(())
    }

    /// Stable fingerprint stored in checkpoints and compared on load.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        sha256_hex(&json)
    }
}
