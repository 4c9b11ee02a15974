use std::collections::BTreeMap;
use std::path::Path;

use candle_core::{DType, Device, Module, Tensor};
use candle_nn::ops::leaky_relu;
use candle_nn::Conv2d;

use super::blocks::{Decoder, DilatedBranches, Drgo, PyramidAttention, ResidualAttention};
use super::checkpoint::{read_tensors, write_tensors, TensorArchive};
use super::{FeatureMap, ModelConfig, ParamStore, CHECKPOINT_VERSION};
use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// Smallest accepted input side.
pub const MIN_IMAGE_SIDE: usize = 16;

struct Encoder {
    stem: Conv2d,
    branches: DilatedBranches,
    attention: Vec<ResidualAttention>,
    pyramids: Vec<PyramidAttention>,
    drgo: Option<Drgo>,
    slope: f64,
}

/// Encoder, edge branch and decoder sharing one parameter store.
pub struct AutoEncoder {
    config: ModelConfig,
    params: ParamStore,
    encoder: Encoder,
    decoder: Decoder,
}

impl AutoEncoder {
    pub fn new(config: ModelConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device);
        let e = &config.encoder;
        let slope = e.leaky_slope;
        let concat = e.concat_channels();
        let stem = ps.conv2d("encoder.stem", 1, e.shallow_channels, 3, 1, true, slope)?;
        let branches = DilatedBranches::new(
            &mut ps,
            "encoder.dilated",
            e.shallow_channels,
            e.branch_channels,
            &e.dilation_rates,
            slope,
        )?;
        let attention = (0..e.residual_stages)
            .map(|i| {
                ResidualAttention::new(
                    &mut ps,
                    &format!("encoder.attention{i}"),
                    concat,
                    e.attention_trunk_depth,
                    e.attention_downsample_factor,
                    slope,
                )
            })
            .collect::<Result<_>>()?;
        let pyramids = (0..e.pyramid_stages)
            .map(|i| {
                let cin = if i == 0 { concat } else { e.latent_channels };
                PyramidAttention::new(
                    &mut ps,
                    &format!("encoder.pyramid{i}"),
                    cin,
                    e.pyramid_channels,
                    e.latent_channels,
                    &e.pyramid_depths,
                    slope,
                )
            })
            .collect::<Result<_>>()?;
        let drgo = if e.use_drgo {
            Some(Drgo::new(&mut ps, "drgo", e.shallow_channels, e.latent_channels, slope)?)
        } else {
            None
        };
        let decoder = Decoder::new(
            &mut ps,
            "decoder",
            e.latent_channels,
            config.decoder.hidden_channels,
            slope,
        )?;
        Ok(Self {
            encoder: Encoder {
                stem,
                branches,
                attention,
                pyramids,
                drgo,
                slope,
            },
            decoder,
            params: ps,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    pub fn decoder_conv_layers(&self) -> usize {
        self.decoder.conv_layer_count()
    }

    /// Checks that an `height x width` input can pass through the encoder.
    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        let f = self.config.encoder.attention_downsample_factor;
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "{height}x{width} input is below the {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} minimum"
            )));
        }
        if height % f != 0 || width % f != 0 {
            return Err(Error::Shape(format!(
                "{height}x{width} input is not divisible by the attention downsample factor {f}"
            )));
        }
        Ok(())
    }

    /// `(N, 1, H, W)` images to `(N, latent, H, W)` latents.
    pub fn encode_tensor(&self, x: &Tensor) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("encoder expects 1 channel, got {c}")));
        }
        self.check_dims(h, w)?;
        let enc = &self.encoder;
        let shallow = leaky_relu(&enc.stem.forward(x)?, enc.slope)?;
        let mut f = enc.branches.forward(&shallow)?;
        for block in &enc.attention {
            f = block.forward(&f)?;
        }
        for block in &enc.pyramids {
            f = block.forward(&f)?;
        }
        if let Some(drgo) = &enc.drgo {
            f = (f + drgo.forward(&shallow)?)?;
        }
        Ok(f)
    }

    /// Raw, unclamped reconstruction of `(N, latent, H, W)` latents.
    pub fn decode_tensor(&self, z: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = z.dims4()?;
        if c != self.config.encoder.latent_channels {
            return Err(Error::Shape(format!(
                "decoder expects {} latent channels, got {c}",
                self.config.encoder.latent_channels
            )));
        }
        self.decoder.forward(z)
    }

    pub fn reconstruct_tensor(&self, x: &Tensor) -> Result<Tensor> {
        self.decode_tensor(&self.encode_tensor(x)?)
    }

    /// Stacks same-sized images into an `(N, 1, H, W)` tensor.
    pub fn images_to_tensor(&self, images: &[&GrayImage]) -> Result<Tensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidInput("empty image batch".into()))?;
        let (h, w) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w);
        for img in images {
            first.ensure_same_dims(img, "image batch")?;
            data.extend_from_slice(img.pixels());
        }
        Ok(Tensor::from_vec(data, (images.len(), 1, h, w), self.device())?.to_dtype(self.dtype())?)
    }

    pub fn encode(&self, img: &GrayImage) -> Result<FeatureMap> {
        self.check_dims(img.height(), img.width())?;
        let x = self.images_to_tensor(&[img])?;
        FeatureMap::from_tensor(&self.encode_tensor(&x)?)
    }

    /// Decodes a batch-one latent and clamps the result into `[0, 1]`.
    pub fn decode(&self, latent: &FeatureMap) -> Result<GrayImage> {
        if latent.batch() != 1 {
            return Err(Error::Shape(format!("decode expects batch 1, got {}", latent.batch())));
        }
        let z = latent.to_tensor(self.dtype(), self.device())?;
        let out = self.decode_tensor(&z)?;
        let px = out.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
        GrayImage::from_clamped(latent.height(), latent.width(), px)
    }

    pub fn reconstruct(&self, img: &GrayImage) -> Result<GrayImage> {
        self.decode(&self.encode(img)?)
    }

    /// Parameters prefixed `model.`, plus version and config metadata.
    pub fn to_archive(&self) -> Result<TensorArchive> {
        let tensors = self
            .params
            .snapshot()?
            .into_iter()
            .map(|(k, v)| (format!("model.{k}"), v))
            .collect();
        let mut metadata = BTreeMap::new();
        metadata.insert("version".into(), CHECKPOINT_VERSION.to_string());
        metadata.insert("model_config".into(), serde_json::to_string(&self.config)?);
        metadata.insert("model_config_hash".into(), self.config.hash());
        Ok(TensorArchive { tensors, metadata })
    }

    /// Rebuilds a model from an archive written by [`AutoEncoder::to_archive`].
    pub fn from_archive(archive: &TensorArchive, path: &Path, device: &Device) -> Result<Self> {
        let bad = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let version = archive.metadata.get("version").map(String::as_str);
        if version != Some(CHECKPOINT_VERSION) {
            return Err(bad(format!("unsupported version {version:?}")));
        }
        let raw = archive
            .metadata
            .get("model_config")
            .ok_or_else(|| bad("missing model_config".into()))?;
        let config: ModelConfig = serde_json::from_str(raw)?;
        if archive.metadata.get("model_config_hash") != Some(&config.hash()) {
            return Err(bad("model config hash mismatch".into()));
        }
        let dtype = archive
            .tensors
            .values()
            .next()
            .map(|t| t.dtype())
            .unwrap_or(DType::F32);
        let model = AutoEncoder::new(config, 0, dtype, device)?;
        let params: BTreeMap<String, Tensor> = archive
            .tensors
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|n| (n.to_string(), v.clone())))
            .collect();
        model.params.load(&params).map_err(|e| bad(e.to_string()))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_tensors(path, &self.to_archive()?)
    }

    /// Loads a checkpoint; when `expected` is given its hash must match the stored config.
    pub fn load(path: &Path, expected: Option<&ModelConfig>, device: &Device) -> Result<Self> {
        let archive = read_tensors(path, device)?;
        let model = Self::from_archive(&archive, path, device)?;
        if let Some(cfg) = expected {
            if cfg.hash() != model.config.hash() {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: "stored model config differs from the runtime config".into(),
                });
            }
        }
        Ok(model)
    }
}
