//! Parameter-free latent fusion: channel softmax, per-channel nuclear norms, and
//! a reduction that turns the norms into modality weights.

mod registry;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use registry::{FusionRegistry, FusionRule};

use crate::error::{Error, Result};
use crate::network::FeatureMap;

/// How per-channel nuclear norms are reduced before normalization across modalities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FusionStrategy {
    #[serde(rename = "sfnn-max")]
    SfnnMax,
    #[serde(rename = "sfnn-mean")]
    SfnnMean,
    #[serde(rename = "sfnn-sum")]
    SfnnSum,
    #[serde(rename = "sfnn-identity")]
    SfnnIdentity,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 4] = [
        FusionStrategy::SfnnMax,
        FusionStrategy::SfnnMean,
        FusionStrategy::SfnnSum,
        FusionStrategy::SfnnIdentity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::SfnnMax => "sfnn-max",
            FusionStrategy::SfnnMean => "sfnn-mean",
            FusionStrategy::SfnnSum => "sfnn-sum",
            FusionStrategy::SfnnIdentity => "sfnn-identity",
        }
    }
}

impl fmt::Display for FusionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown fusion strategy {s:?}; available: {}", names.join(", ")))
        })
    }
}

/// Modality weights. Scalar kinds give one pair; the identity kind gives one pair per channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FusionWeights {
    Scalar { a: f64, b: f64 },
    PerChannel { a: Vec<f64>, b: Vec<f64> },
}

impl FusionWeights {
    pub fn a(&self, channel: usize) -> f64 {
        match self {
            FusionWeights::Scalar { a, .. } => *a,
            FusionWeights::PerChannel { a, .. } => a[channel],
        }
    }

    pub fn b(&self, channel: usize) -> f64 {
        match self {
            FusionWeights::Scalar { b, .. } => *b,
            FusionWeights::PerChannel { b, .. } => b[channel],
        }
    }

    /// The same weights with the modalities exchanged.
    pub fn swapped(&self) -> FusionWeights {
        match self {
            FusionWeights::Scalar { a, b } => FusionWeights::Scalar { a: *b, b: *a },
            FusionWeights::PerChannel { a, b } => FusionWeights::PerChannel {
                a: b.clone(),
                b: a.clone(),
            },
        }
    }
}

/// Softmax across channels at every pixel, stabilized by subtracting the per-pixel maximum.
pub fn channel_softmax(f: &FeatureMap) -> FeatureMap {
    let [n, c, h, w] = f.shape();
    let plane = h * w;
    let src = f.data();
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let at = |k: usize| base + k * plane + p;
            let max = (0..c).map(|k| src[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for k in 0..c {
                let e = (src[at(k)] - max).exp();
                out[at(k)] = e;
                sum += e;
            }
            for k in 0..c {
                out[at(k)] /= sum;
            }
        }
    }
    FeatureMap::new(f.shape(), out).expect("softmax of finite values is finite")
}

/// Sum of singular values of a row-major `rows x cols` matrix.
/// `None` when the SVD does not converge.
fn try_nuclear_norm(rows: usize, cols: usize, data: &[f64]) -> Option<f64> {
    assert_eq!(data.len(), rows * cols, "matrix data length");
    let m = DMatrix::from_row_slice(rows, cols, data);
    let max_iter = 1000 * rows.max(cols).max(1);
    m.try_svd(false, false, f64::EPSILON, max_iter)
        .map(|svd| svd.singular_values.iter().sum())
}

/// Nuclear norm of a row-major `rows x cols` matrix.
pub fn nuclear_norm(rows: usize, cols: usize, data: &[f64]) -> Result<f64> {
    try_nuclear_norm(rows, cols, data).ok_or(Error::SvdNonConvergence { channel: 0 })
}

/// Nuclear norm of every channel of batch item 0.
pub fn channel_nuclear_norms(f: &FeatureMap) -> Result<Vec<f64>> {
    (0..f.channels())
        .map(|c| {
            try_nuclear_norm(f.height(), f.width(), f.channel(0, c))
                .ok_or(Error::SvdNonConvergence { channel: c })
        })
        .collect()
}

fn normalize_pair(a: f64, b: f64) -> Result<(f64, f64)> {
    let s = a + b;
    if !(s.is_finite() && s > 0.0 && a >= 0.0 && b >= 0.0) {
        return Err(Error::DegenerateWeights(format!("reduced norms {a} and {b}")));
    }
    Ok((a / s, b / s))
}

/// Turns per-channel norms of the two modalities into weights for `kind`.
pub fn weights_from_norms(na: &[f64], nb: &[f64], kind: FusionStrategy) -> Result<FusionWeights> {
    if na.len() != nb.len() || na.is_empty() {
        return Err(Error::Shape(format!("norm vectors of length {} and {}", na.len(), nb.len())));
    }
    let reduce = |v: &[f64]| match kind {
        FusionStrategy::SfnnMax => v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        FusionStrategy::SfnnMean => v.iter().sum::<f64>() / v.len() as f64,
        FusionStrategy::SfnnSum => v.iter().sum(),
        FusionStrategy::SfnnIdentity => unreachable!("identity is not reduced"),
    };
    if kind == FusionStrategy::SfnnIdentity {
        let (a, b) = na
            .iter()
            .zip(nb)
            .map(|(&x, &y)| normalize_pair(x, y))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        return Ok(FusionWeights::PerChannel { a, b });
    }
    let (a, b) = normalize_pair(reduce(na), reduce(nb))?;
    Ok(FusionWeights::Scalar { a, b })
}

fn check_single_pair(fa: &FeatureMap, fb: &FeatureMap) -> Result<()> {
    fa.ensure_same_shape(fb)?;
    if fa.batch() != 1 {
        return Err(Error::Shape(format!("weights are computed per pair; got batch {}", fa.batch())));
    }
    Ok(())
}

/// Weights for one pair of batch-one latents.
pub fn sfnn_weights(fa: &FeatureMap, fb: &FeatureMap, kind: FusionStrategy) -> Result<FusionWeights> {
    check_single_pair(fa, fb)?;
    let na = channel_nuclear_norms(&channel_softmax(fa))?;
    let nb = channel_nuclear_norms(&channel_softmax(fb))?;
    weights_from_norms(&na, &nb, kind)
}

/// `W_a * f_a + W_b * f_b`, channel by channel, for batch-one latents.
pub fn apply_weights(fa: &FeatureMap, fb: &FeatureMap, w: &FusionWeights) -> Result<FeatureMap> {
    check_single_pair(fa, fb)?;
    let mut out = Vec::with_capacity(fa.data().len());
    for c in 0..fa.channels() {
        let (wa, wb) = (w.a(c), w.b(c));
        out.extend(
            fa.channel(0, c)
                .iter()
                .zip(fb.channel(0, c))
                .map(|(&x, &y)| wa * x + wb * y),
        );
    }
    FeatureMap::new(fa.shape(), out)
}

/// Fuses two latents of equal shape; batches are fused item by item.
pub fn fuse(fa: &FeatureMap, fb: &FeatureMap, kind: FusionStrategy) -> Result<FeatureMap> {
    fa.ensure_same_shape(fb)?;
    let items = (0..fa.batch())
        .map(|i| {
            let (a, b) = (fa.item(i), fb.item(i));
            let w = sfnn_weights(&a, &b, kind)?;
            apply_weights(&a, &b, &w)
        })
        .collect::<Result<Vec<_>>>()?;
    FeatureMap::stack(&items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fmap(c: usize, h: usize, w: usize, data: Vec<f64>) -> FeatureMap {
        FeatureMap::new([1, c, h, w], data).unwrap()
    }

    #[test]
    fn softmax_closed_forms() {
        let s = channel_softmax(&fmap(2, 1, 1, vec![0.0, 3f64.ln()]));
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
        let u = channel_softmax(&fmap(4, 1, 2, vec![1.5; 8]));
        assert!(u.data().iter().all(|&v| v == 0.25));
        let big = channel_softmax(&fmap(2, 1, 1, vec![1000.0, 1000.0]));
        assert_eq!(big.data(), &[0.5, 0.5]);
    }

    #[test]
    fn nuclear_norm_closed_forms() {
        assert!((nuclear_norm(2, 2, &[1.0, 0.0, 0.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!((nuclear_norm(5, 5, &[1.0; 25]).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(nuclear_norm(3, 2, &[0.0; 6]).unwrap(), 0.0);
        // [[1,2],[3,4]]: singular values are square roots of the eigenvalues of M^T M.
        let (tr, det): (f64, f64) = (10.0 + 20.0, 10.0 * 20.0 - 14.0 * 14.0);
        let disc = (tr * tr / 4.0 - det).sqrt();
        let oracle = (tr / 2.0 + disc).sqrt() + (tr / 2.0 - disc).sqrt();
        assert!((nuclear_norm(2, 2, &[1.0, 2.0, 3.0, 4.0]).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn weights_examples() {
        let w = weights_from_norms(&[2.0, 4.0], &[1.0, 1.0], FusionStrategy::SfnnMax).unwrap();
        assert_eq!(w, FusionWeights::Scalar { a: 0.8, b: 0.2 });
        let w = weights_from_norms(&[1.0, 1.0], &[1.0, 3.0], FusionStrategy::SfnnSum).unwrap();
        match w {
            FusionWeights::Scalar { a, b } => {
                assert!((a - 2.0 / 6.0).abs() < 1e-15 && (b - 4.0 / 6.0).abs() < 1e-15)
            }
            _ => panic!("scalar expected"),
        }
        let w = weights_from_norms(&[1.0, 3.0], &[3.0, 1.0], FusionStrategy::SfnnIdentity).unwrap();
        assert_eq!(
            w,
            FusionWeights::PerChannel {
                a: vec![0.25, 0.75],
                b: vec![0.75, 0.25]
            }
        );
        assert!(matches!(
            weights_from_norms(&[0.0], &[0.0], FusionStrategy::SfnnMean),
            Err(Error::DegenerateWeights(_))
        ));
    }

    #[test]
    fn strategy_names_round_trip() {
        for k in FusionStrategy::ALL {
            assert_eq!(k.name().parse::<FusionStrategy>().unwrap(), k);
        }
        let err = "fer".parse::<FusionStrategy>().unwrap_err().to_string();
        assert!(err.contains("sfnn-max") && err.contains("sfnn-identity"));
    }

    #[test]
    fn rejects_batched_weights_and_shape_mismatch() {
        let a = FeatureMap::zeros([2, 2, 4, 4]).unwrap();
        assert!(sfnn_weights(&a, &a, FusionStrategy::SfnnMax).is_err());
        assert_eq!(fuse(&a, &a, FusionStrategy::SfnnMax).unwrap(), a);
        let b = FeatureMap::zeros([1, 2, 4, 4]).unwrap();
        assert!(fuse(&a, &b, FusionStrategy::SfnnMax).is_err());
    }

    fn map_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(-5.0f64..5.0, 3 * 16),
            prop::collection::vec(-5.0f64..5.0, 3 * 16),
        )
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 3 * 4), shift in -20.0f64..20.0) {
            let f = fmap(3, 2, 2, v.clone());
            let s = channel_softmax(&f);
            for p in 0..4 {
                let sum: f64 = (0..3).map(|c| s.channel(0, c)[p]).sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }
            let shifted = channel_softmax(&fmap(3, 2, 2, v.iter().map(|x| x + shift).collect()));
            for (x, y) in s.data().iter().zip(shifted.data()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn weights_invariants((a, b) in map_strategy()) {
            let fa = fmap(3, 4, 4, a);
            let fb = fmap(3, 4, 4, b);
            for kind in FusionStrategy::ALL {
                let w = sfnn_weights(&fa, &fb, kind).unwrap();
                for c in 0..3 {
                    prop_assert!(w.a(c) >= 0.0 && w.b(c) >= 0.0);
                    prop_assert!((w.a(c) + w.b(c) - 1.0).abs() < 1e-12);
                }
                prop_assert_eq!(sfnn_weights(&fb, &fa, kind).unwrap(), w.swapped());
                let same = fuse(&fa, &fa, kind).unwrap();
                for (x, y) in same.data().iter().zip(fa.data()) {
                    prop_assert!((x - y).abs() < 1e-12);
                }
                let fused = fuse(&fa, &fb, kind).unwrap();
                for ((f, x), y) in fused.data().iter().zip(fa.data()).zip(fb.data()) {
                    prop_assert!(*f >= x.min(*y) - 1e-12 && *f <= x.max(*y) + 1e-12);
                }
            }
        }
    }
}
