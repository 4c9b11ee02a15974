//! Reconstruction objective: pixel, gradient and perceptual terms.

mod perceptual;

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};

pub use perceptual::{layer_index, layer_names, PerceptualExtractor, FALLBACK_EXTRACTOR_SEED};

use crate::error::{Error, Result};
use crate::network::{gradient_xy, GradientOperator};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_grad: f64,
    pub lambda_perp: f64,
    pub perceptual_layers: Vec<String>,
    pub gradient_operator: GradientOperator,
    /// Pretrained VGG16 weights (safetensors). `None` selects the fixed-seed stand-in.
    pub perceptual_weights: Option<PathBuf>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_grad: 0.5,
            lambda_perp: 0.5,
            perceptual_layers: vec!["relu4_3".into()],
            gradient_operator: GradientOperator::Sobel,
            perceptual_weights: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_grad", self.lambda_grad), ("lambda_perp", self.lambda_perp)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.lambda_perp > 0.0 && self.perceptual_layers.is_empty() {
            return Err(Error::Config("perceptual_layers is empty".into()));
        }
        for l in &self.perceptual_layers {
            layer_index(l)?;
        }
        Ok(())
    }
}

fn check_pair(x: &Tensor, x_hat: &Tensor) -> Result<()> {
    if x.dims() != x_hat.dims() {
        return Err(Error::Shape(format!("loss inputs differ: {:?} vs {:?}", x.dims(), x_hat.dims())));
    }
    Ok(())
}

/// Mean squared error over batch and pixels.
pub fn pixel_loss(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    check_pair(x, x_hat)?;
    Ok((x - x_hat)?.sqr()?.mean_all()?)
}

/// Mean over batch and pixels of `(dGx)^2 + (dGy)^2`.
pub fn gradient_loss(x: &Tensor, x_hat: &Tensor, op: GradientOperator) -> Result<Tensor> {
    check_pair(x, x_hat)?;
    let (gx, gy) = gradient_xy(x, op)?;
    let (hx, hy) = gradient_xy(x_hat, op)?;
    let dx = (gx - hx)?.sqr()?.mean_all()?;
    let dy = (gy - hy)?.sqr()?.mean_all()?;
    Ok((dx + dy)?)
}

/// Sum over `layers` of the mean squared feature difference at that layer.
pub fn perceptual_loss(
    extractor: &PerceptualExtractor,
    x: &Tensor,
    x_hat: &Tensor,
    layers: &[usize],
) -> Result<Tensor> {
    check_pair(x, x_hat)?;
    let fx = extractor.features(&x.detach(), layers)?;
    let fh = extractor.features(x_hat, layers)?;
    let mut total = Tensor::zeros((), x_hat.dtype(), x_hat.device())?;
    for (a, b) in fx.iter().zip(&fh) {
        let d = (a - b)?.sqr()?.mean_all()?.to_dtype(x_hat.dtype())?;
        total = (total + d)?;
    }
    Ok(total)
}

/// Scalar values of the three loss terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub pixel: f64,
    pub grad: f64,
    pub perceptual: f64,
}

impl LossComponents {
    /// `pixel + lambda_grad * grad + lambda_perp * perceptual`; the gradient term is
    /// dropped entirely when `use_grad` is false.
    pub fn total(&self, cfg: &LossConfig, use_grad: bool) -> f64 {
        let grad = if use_grad { cfg.lambda_grad * self.grad } else { 0.0 };
        self.pixel + grad + cfg.lambda_perp * self.perceptual
    }

    pub fn is_finite(&self) -> bool {
        self.pixel.is_finite() && self.grad.is_finite() && self.perceptual.is_finite()
    }
}

/// The full training objective with its extractor.
pub struct ReconstructionLoss {
    config: LossConfig,
    use_grad: bool,
    layers: Vec<usize>,
    extractor: Option<PerceptualExtractor>,
}

impl ReconstructionLoss {
    /// Builds the extractor when `lambda_perp > 0`, from `perceptual_weights` if set.
    pub fn new(config: LossConfig, use_grad: bool, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let layers = config
            .perceptual_layers
            .iter()
            .map(|l| layer_index(l))
            .collect::<Result<Vec<_>>>()?;
        let extractor = if config.lambda_perp > 0.0 {
            Some(match &config.perceptual_weights {
                Some(path) => PerceptualExtractor::from_file(path, dtype, device)?,
                None => {
                    log::warn!("no pretrained perceptual weights configured; using the fixed-seed stand-in");
                    PerceptualExtractor::random(FALLBACK_EXTRACTOR_SEED, dtype, device)?
                }
            })
        } else {
            None
        };
        Ok(Self {
            config,
            use_grad,
            layers,
            extractor,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    pub fn uses_grad(&self) -> bool {
        self.use_grad
    }

    /// `Some(true)` for pretrained weights, `Some(false)` for the stand-in, `None` if unused.
    pub fn extractor_pretrained(&self) -> Option<bool> {
        self.extractor.as_ref().map(PerceptualExtractor::is_pretrained)
    }

    /// Differentiable total loss plus the individual term values.
    pub fn compute(&self, x: &Tensor, x_hat: &Tensor) -> Result<(Tensor, LossComponents)> {
        let pixel = pixel_loss(x, x_hat)?;
        let mut total = pixel.clone();
        let mut parts = LossComponents {
            pixel: pixel.to_dtype(DType::F64)?.to_scalar::<f64>()?,
            ..Default::default()
        };
        if self.use_grad {
            let grad = gradient_loss(x, x_hat, self.config.gradient_operator)?;
            parts.grad = grad.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            total = (total + (grad * self.config.lambda_grad)?)?;
        }
        if let Some(ex) = &self.extractor {
            let perp = perceptual_loss(ex, x, x_hat, &self.layers)?;
            parts.perceptual = perp.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            total = (total + (perp * self.config.lambda_perp)?)?;
        }
        Ok((total, parts))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(data: Vec<f64>, h: usize, w: usize) -> Tensor {
        Tensor::from_vec(data, (1, 1, h, w), &Device::Cpu).unwrap()
    }

    fn scalar(t: Tensor) -> f64 {
        t.to_scalar::<f64>().unwrap()
    }

    #[test]
    fn pixel_loss_values() {
        let a = img(vec![0.0; 16], 4, 4);
        let b = img(vec![0.5; 16], 4, 4);
        assert_eq!(scalar(pixel_loss(&a, &a).unwrap()), 0.0);
        assert_eq!(scalar(pixel_loss(&a, &b).unwrap()), 0.25);
        assert_eq!(scalar(pixel_loss(&b, &a).unwrap()), 0.25);
        assert!(pixel_loss(&a, &img(vec![0.0; 20], 4, 5)).is_err());
    }

    #[test]
    fn gradient_loss_of_constants_is_zero() {
        let a = img(vec![0.1; 36], 6, 6);
        let b = img(vec![0.9; 36], 6, 6);
        assert_eq!(scalar(gradient_loss(&a, &b, GradientOperator::Sobel).unwrap()), 0.0);
    }

    #[test]
    fn gradient_loss_on_ramp_matches_enumeration() {
        // Unit horizontal ramp vs. a constant. With replicated borders the Sobel x
        // response per column is 4 * (x[c + 1] - x[c - 1]) with clamped indices.
        let ramp: Vec<f64> = (0..25).map(|i| (i % 5) as f64).collect();
        let mut sum = 0.0;
        for _row in 0..5 {
            for c in 0..5i64 {
                let right = (c + 1).min(4) as f64;
                let left = (c - 1).max(0) as f64;
                sum += (4.0 * (right - left)).powi(2);
            }
        }
        let expected = sum / 25.0;
        let got = scalar(gradient_loss(&img(ramp, 5, 5), &img(vec![0.3; 25], 5, 5), GradientOperator::Sobel).unwrap());
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn total_is_weighted_sum() {
        let cfg = LossConfig::default();
        let parts = LossComponents {
            pixel: 1.0,
            grad: 2.0,
            perceptual: 4.0,
        };
        assert_eq!(parts.total(&cfg, true), 4.0);
        assert_eq!(parts.total(&cfg, false), 3.0);
        let zero = LossConfig {
            lambda_grad: 0.0,
            lambda_perp: 0.0,
            ..LossConfig::default()
        };
        assert_eq!(parts.total(&zero, true), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let bad = LossConfig {
            perceptual_layers: vec!["pool9".into()],
            ..LossConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let neg = LossConfig {
            lambda_grad: -1.0,
            ..LossConfig::default()
        };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn reconstruction_loss_zero_on_identity_and_consistent() {
        let loss = ReconstructionLoss::new(LossConfig::default(), true, DType::F64, &Device::Cpu).unwrap();
        assert_eq!(loss.extractor_pretrained(), Some(false));
        let x = Tensor::rand(0f64, 1.0, (2, 1, 16, 16), &Device::Cpu).unwrap();
        let y = Tensor::rand(0f64, 1.0, (2, 1, 16, 16), &Device::Cpu).unwrap();
        let (t, parts) = loss.compute(&x, &x).unwrap();
        assert_eq!(scalar(t), 0.0);
        assert_eq!(parts, LossComponents::default());
        let (t, parts) = loss.compute(&x, &y).unwrap();
        assert!(parts.pixel > 0.0 && parts.grad > 0.0 && parts.perceptual >= 0.0);
        assert!((scalar(t) - parts.total(loss.config(), true)).abs() < 1e-9);
    }
}
