//! Building blocks of the encoder and decoder.

use candle_core::{Module, Tensor};
use candle_nn::ops::{leaky_relu, sigmoid};
use candle_nn::Conv2d;
use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{Error, Result};

/// Fixed derivative operator used by the edge branch and the gradient loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GradientOperator {
    #[default]
    Sobel,
    ForwardDifference,
}

/// Per-channel x and y derivatives with replicated borders. Differences are taken
/// before smoothing, so a constant input has exactly zero response everywhere.
///
/// Sobel x is `[-1 0 1; -2 0 2; -1 0 1]` as a cross-correlation, y its transpose;
/// forward differences are `x[i + 1] - x[i]`.
pub fn gradient_xy(x: &Tensor, op: GradientOperator) -> Result<(Tensor, Tensor)> {
    let (_, _, h, w) = x.dims4()?;
    let p = x.pad_with_same(2, 1, 1)?.pad_with_same(3, 1, 1)?;
    // `p` is (h + 2) x (w + 2); `win(dy, dx)` is the h x w window offset by (dy, dx).
    let win = |dy: usize, dx: usize| -> Result<Tensor> { Ok(p.narrow(2, dy, h)?.narrow(3, dx, w)?) };
    match op {
        GradientOperator::Sobel => {
            let dx = (p.narrow(3, 2, w)? - p.narrow(3, 0, w)?)?;
            let dy = (p.narrow(2, 2, h)? - p.narrow(2, 0, h)?)?;
            let gx = ((dx.narrow(2, 0, h)? + dx.narrow(2, 2, h)?)? + (dx.narrow(2, 1, h)? * 2.0)?)?;
            let gy = ((dy.narrow(3, 0, w)? + dy.narrow(3, 2, w)?)? + (dy.narrow(3, 1, w)? * 2.0)?)?;
            Ok((gx, gy))
        }
        GradientOperator::ForwardDifference => {
            let c = win(1, 1)?;
            Ok(((win(1, 2)? - &c)?, (win(2, 1)? - &c)?))
        }
    }
}

/// `|Gx| + |Gy|` of the Sobel responses, channel by channel.
pub fn sobel_magnitude(x: &Tensor) -> Result<Tensor> {
    let (gx, gy) = gradient_xy(x, GradientOperator::Sobel)?;
    Ok((gx.abs()? + gy.abs()?)?)
}

/// 1-D bilinear interpolation matrix (`n * factor` rows, `n` columns) with
/// half-pixel centers and clamped borders.
fn interpolation_matrix(n: usize, factor: usize) -> Vec<f64> {
    let out = n * factor;
    let mut m = vec![0.0; out * n];
    for o in 0..out {
        let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        let t = src - i0 as f64;
        m[o * n + i0] += 1.0 - t;
        m[o * n + i1] += t;
    }
    m
}

/// Bilinear upsampling by an integer factor, expressed as two matrix products so
/// it stays differentiable.
pub fn bilinear_upsample(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 1 {
        return Ok(x.clone());
    }
    let (_, _, h, w) = x.dims4()?;
    let dev = x.device();
    let rows = Tensor::from_vec(interpolation_matrix(h, factor), (h * factor, h), dev)?
        .to_dtype(x.dtype())?;
    let cols = Tensor::from_vec(interpolation_matrix(w, factor), (w * factor, w), dev)?
        .to_dtype(x.dtype())?
        .t()?;
    let widened = x.broadcast_matmul(&cols)?;
    Ok(rows.broadcast_matmul(&widened)?)
}

fn lrelu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(leaky_relu(x, slope)?)
}

/// Parallel dilated 3x3 convolutions over the shallow features, concatenated
/// along channels.
pub struct DilatedBranches {
    convs: Vec<Conv2d>,
    slope: f64,
}

impl DilatedBranches {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        branch_channels: usize,
        rates: &[usize],
        slope: f64,
    ) -> Result<Self> {
        let convs = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                ps.conv2d(&format!("{prefix}.{i}"), in_channels, branch_channels, 3, r, true, slope)
            })
            .collect::<Result<_>>()?;
        Ok(Self { convs, slope })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let outs = self
            .convs
            .iter()
            .map(|c| lrelu(&c.forward(x)?, self.slope))
            .collect::<Result<Vec<_>>>()?;
        Ok(Tensor::cat(&outs, 1)?)
    }
}

/// `trunk(x) * sigmoid(mask(x)) + x`, the mask path pooling down by `factor`,
/// convolving, and interpolating back up.
pub struct ResidualAttention {
    trunk: Vec<Conv2d>,
    mask: Conv2d,
    factor: usize,
    slope: f64,
}

impl ResidualAttention {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        channels: usize,
        trunk_depth: usize,
        factor: usize,
        slope: f64,
    ) -> Result<Self> {
        let trunk = (0..trunk_depth)
            .map(|i| ps.conv2d(&format!("{prefix}.trunk.{i}"), channels, channels, 3, 1, true, slope))
            .collect::<Result<_>>()?;
        let mask = ps.conv2d(&format!("{prefix}.mask"), channels, channels, 3, 1, true, 1.0)?;
        Ok(Self {
            trunk,
            mask,
            factor,
            slope,
        })
    }

    fn check_dims(&self, x: &Tensor) -> Result<()> {
        let (_, _, h, w) = x.dims4()?;
        if h % self.factor != 0 || w % self.factor != 0 {
            return Err(Error::Shape(format!(
                "{h}x{w} is not divisible by the attention downsample factor {}",
                self.factor
            )));
        }
        Ok(())
    }

    /// Attention weights in `(0, 1)`, same shape as `x`.
    pub fn mask(&self, x: &Tensor) -> Result<Tensor> {
        self.check_dims(x)?;
        let pooled = if self.factor > 1 {
            x.avg_pool2d(self.factor)?
        } else {
            x.clone()
        };
        let m = self.mask.forward(&pooled)?;
        Ok(sigmoid(&bilinear_upsample(&m, self.factor)?)?)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mask = self.mask(x)?;
        let mut t = x.clone();
        for conv in &self.trunk {
            t = lrelu(&conv.forward(&t)?, self.slope)?;
        }
        Ok(((t * mask)? + x)?)
    }
}

/// Parallel stacks of 1, 2, 3, ... 3x3 convolutions (receptive fields 3, 5, 7, ...),
/// concatenated and merged by a 1x1 projection.
pub struct PyramidAttention {
    stacks: Vec<Vec<Conv2d>>,
    merge: Conv2d,
    depths: Vec<usize>,
    slope: f64,
}

impl PyramidAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        path_channels: usize,
        out_channels: usize,
        depths: &[usize],
        slope: f64,
    ) -> Result<Self> {
        let mut stacks = Vec::with_capacity(depths.len());
        for (s, &depth) in depths.iter().enumerate() {
            let stack = (0..depth)
                .map(|j| {
                    let cin = if j == 0 { in_channels } else { path_channels };
                    ps.conv2d(&format!("{prefix}.path{s}.{j}"), cin, path_channels, 3, 1, true, slope)
                })
                .collect::<Result<Vec<_>>>()?;
            stacks.push(stack);
        }
        let merge = ps.conv2d(
            &format!("{prefix}.merge"),
            path_channels * depths.len(),
            out_channels,
            1,
            1,
            true,
            1.0,
        )?;
        Ok(Self {
            stacks,
            merge,
            depths: depths.to_vec(),
            slope,
        })
    }

    /// Effective receptive field of each path: `2 * depth + 1`.
    pub fn receptive_fields(&self) -> Vec<usize> {
        self.depths.iter().map(|d| 2 * d + 1).collect()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut outs = Vec::with_capacity(self.stacks.len());
        for stack in &self.stacks {
            let mut s = x.clone();
            for conv in stack {
                s = lrelu(&conv.forward(&s)?, self.slope)?;
            }
            outs.push(s);
        }
        Ok(self.merge.forward(&Tensor::cat(&outs, 1)?)?)
    }
}

/// Edge enhancer on the shallow features: a residual pair of 3x3 convolutions plus
/// a 1x1-projected Sobel magnitude, summed and projected to the latent width.
pub struct Drgo {
    conv1: Conv2d,
    conv2: Conv2d,
    gradient: Conv2d,
    project: Conv2d,
    slope: f64,
}

impl Drgo {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        channels: usize,
        out_channels: usize,
        slope: f64,
    ) -> Result<Self> {
        Ok(Self {
            conv1: ps.conv2d(&format!("{prefix}.conv1"), channels, channels, 3, 1, true, slope)?,
            conv2: ps.conv2d(&format!("{prefix}.conv2"), channels, channels, 3, 1, true, slope)?,
            gradient: ps.conv2d(&format!("{prefix}.gradient"), channels, channels, 1, 1, false, 1.0)?,
            project: ps.conv2d(&format!("{prefix}.project"), channels, out_channels, 1, 1, true, 1.0)?,
            slope,
        })
    }

    /// Contribution of the gradient path alone.
    pub fn gradient_branch(&self, shallow: &Tensor) -> Result<Tensor> {
        Ok(self.gradient.forward(&sobel_magnitude(shallow)?)?)
    }

    pub fn forward(&self, shallow: &Tensor) -> Result<Tensor> {
        let inner = lrelu(&self.conv1.forward(shallow)?, self.slope)?;
        let residual = (self.conv2.forward(&inner)? + shallow)?;
        let merged = (residual + self.gradient_branch(shallow)?)?;
        Ok(self.project.forward(&merged)?)
    }
}

/// Three 3x3 convolutions; the first two use leaky ReLU, the last is linear.
pub struct Decoder {
    convs: [Conv2d; 3],
    slope: f64,
}

impl Decoder {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        hidden: [usize; 2],
        slope: f64,
    ) -> Result<Self> {
        Ok(Self {
            convs: [
                ps.conv2d(&format!("{prefix}.conv1"), in_channels, hidden[0], 3, 1, true, slope)?,
                ps.conv2d(&format!("{prefix}.conv2"), hidden[0], hidden[1], 3, 1, true, slope)?,
                ps.conv2d(&format!("{prefix}.conv3"), hidden[1], 1, 3, 1, true, 1.0)?,
            ],
            slope,
        })
    }

    pub fn conv_layer_count(&self) -> usize {
        self.convs.len()
    }

    /// Raw (unclamped) reconstruction.
    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        let h = lrelu(&self.convs[0].forward(z)?, self.slope)?;
        let h = lrelu(&self.convs[1].forward(&h)?, self.slope)?;
        Ok(self.convs[2].forward(&h)?)
    }
}
