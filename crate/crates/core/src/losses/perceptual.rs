use std::path::Path;

use candle_core::{DType, Device, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::network::read_tensors;

/// Seed of the stand-in extractor used when no pretrained weights are supplied.
pub const FALLBACK_EXTRACTOR_SEED: u64 = 0x5EED_0016;

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// VGG16 feature stack: conv output widths, `None` marks a 2x2 max pool.
const VGG16: [Option<usize>; 18] = [
    Some(64),
    Some(64),
    None,
    Some(128),
    Some(128),
    None,
    Some(256),
    Some(256),
    Some(256),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
    Some(512),
    Some(512),
    Some(512),
    None,
];

const LAYER_NAMES: [&str; 13] = [
    "relu1_1", "relu1_2", "relu2_1", "relu2_2", "relu3_1", "relu3_2", "relu3_3", "relu4_1",
    "relu4_2", "relu4_3", "relu5_1", "relu5_2", "relu5_3",
];

enum Op {
    /// Weight and `(1, C, 1, 1)` bias.
    Conv(Tensor, Tensor),
    Pool,
}

/// Frozen VGG16 convolutional trunk. Weights are plain tensors, never variables,
/// so no gradient ever reaches them.
pub struct PerceptualExtractor {
    ops: Vec<Op>,
    pretrained: bool,
    dtype: DType,
}

/// Position of a named activation among the 13 convolutions (0-based).
pub fn layer_index(name: &str) -> Result<usize> {
    LAYER_NAMES.iter().position(|&n| n == name).ok_or_else(|| {
        Error::Config(format!(
            "unknown perceptual layer {name:?}; available: {}",
            LAYER_NAMES.join(", ")
        ))
    })
}

pub fn layer_names() -> &'static [&'static str] {
    &LAYER_NAMES
}

impl PerceptualExtractor {
    /// Fixed-seed Kaiming-initialized weights in the VGG16 layout.
    pub fn random(seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(dtype, false, |_, cin, cout| {
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("positive std");
            let w: Vec<f64> = (0..cout * cin * 9).map(|_| normal.sample(&mut rng)).collect();
            Ok((
                Tensor::from_vec(w, (cout, cin, 3, 3), device)?,
                Tensor::zeros(cout, DType::F64, device)?,
            ))
        })
    }

    /// Loads `features.<i>.weight` / `features.<i>.bias` from a safetensors file
    /// exported from the torchvision VGG16 state dict.
    pub fn from_file(path: &Path, dtype: DType, device: &Device) -> Result<Self> {
        let archive = read_tensors(path, device)?;
        Self::build(dtype, true, |idx, cin, cout| {
            let get = |suffix: &str| {
                let key = format!("features.{idx}.{suffix}");
                archive.tensors.get(&key).cloned().ok_or_else(|| Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("missing tensor {key}"),
                })
            };
            let (w, b) = (get("weight")?, get("bias")?);
            if w.dims() != [cout, cin, 3, 3] || b.dims() != [cout] {
                return Err(Error::Checkpoint {
                    path: path.to_path_buf(),
                    reason: format!("features.{idx} has shape {:?}", w.dims()),
                });
            }
            Ok((w, b))
        })
    }

    fn build(
        dtype: DType,
        pretrained: bool,
        // (index in the torchvision `features` sequence, in, out) -> (weight, bias)
        mut make: impl FnMut(usize, usize, usize) -> Result<(Tensor, Tensor)>,
    ) -> Result<Self> {
        let mut ops = Vec::new();
        let mut cin = 3;
        let mut idx = 0;
        for entry in VGG16 {
            match entry {
                Some(cout) => {
                    let (w, b) = make(idx, cin, cout)?;
                    let b = b.to_dtype(dtype)?.reshape((1, cout, 1, 1))?;
                    ops.push(Op::Conv(w.to_dtype(dtype)?, b));
                    cin = cout;
                    idx += 2;
                }
                None => {
                    ops.push(Op::Pool);
                    idx += 1;
                }
            }
        }
        Ok(Self {
            ops,
            pretrained,
            dtype,
        })
    }

    pub fn is_pretrained(&self) -> bool {
        self.pretrained
    }

    /// Replicates a `(N, 1, H, W)` image in `[0, 1]` to three channels and applies
    /// ImageNet normalization.
    fn prepare(&self, x: &Tensor) -> Result<Tensor> {
        let (n, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(Error::Shape(format!("extractor expects 1 channel, got {c}")));
        }
        let dev = x.device();
        let mean = Tensor::new(&IMAGENET_MEAN, dev)?.to_dtype(self.dtype)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&IMAGENET_STD, dev)?.to_dtype(self.dtype)?.reshape((1, 3, 1, 1))?;
        let rgb = x.to_dtype(self.dtype)?.broadcast_as((n, 3, h, w))?;
        Ok(rgb.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    /// Activations at the requested conv positions (see [`layer_index`]), in the
    /// order of `layers`. Stops after the deepest requested layer.
    pub fn features(&self, x: &Tensor, layers: &[usize]) -> Result<Vec<Tensor>> {
        let deepest = match layers.iter().max() {
            Some(&d) => d,
            None => return Ok(Vec::new()),
        };
        let mut out: Vec<Option<Tensor>> = vec![None; layers.len()];
        let mut h = self.prepare(x)?;
        let mut conv_pos = 0;
        for op in &self.ops {
            match op {
                Op::Conv(w, b) => {
                    h = h.conv2d(w, 1, 1, 1, 1)?.broadcast_add(b)?.relu()?;
                    for (slot, &l) in out.iter_mut().zip(layers) {
                        if l == conv_pos {
                            *slot = Some(h.clone());
                        }
                    }
                    if conv_pos == deepest {
                        break;
                    }
                    conv_pos += 1;
                }
                Op::Pool => {
                    let (_, _, hh, ww) = h.dims4()?;
                    if hh < 2 || ww < 2 {
                        return Err(Error::Shape(format!(
                            "image too small for perceptual layer relu{}",
                            deepest + 1
                        )));
                    }
                    h = max_pool2(&h)?;
                }
            }
        }
        Ok(out.into_iter().map(|t| t.expect("layer reached")).collect())
    }
}

/// 2x2 max pooling with stride 2; odd trailing rows and columns are dropped.
/// The whole upstream gradient goes to the maximum of each window.
pub(crate) fn max_pool2(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    let (ho, wo) = (h / 2, w / 2);
    let x = x.narrow(2, 0, ho * 2)?.narrow(3, 0, wo * 2)?;
    Ok(x.reshape((n, c, ho, 2, wo, 2))?.max(5)?.max(3)?)
}
