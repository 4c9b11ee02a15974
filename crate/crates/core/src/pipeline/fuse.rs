use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionRegistry, FusionRule};
use crate::imaging::{
    rgb_to_ycbcr, save_gray_png, save_source_png, ycbcr_to_rgb, GrayImage, ImagePair, PairedDataset,
    SourceImage, YCbCrImage,
};
use crate::metrics::{fusion_metrics, MeanStd, MetricReport, RunMetadata};
use crate::network::{AutoEncoder, FeatureMap};

/// Warm-up iterations excluded from [`benchmark_fusion_time`] statistics.
pub const BENCHMARK_WARMUP: usize = 3;
/// Fewest pairs [`benchmark_fusion_time`] accepts.
pub const BENCHMARK_MIN_PAIRS: usize = 10;

#[derive(Clone, Debug)]
pub struct Latents {
    pub a: FeatureMap,
    pub b: FeatureMap,
    pub fused: FeatureMap,
}

#[derive(Clone, Debug)]
pub struct FusionOutput {
    /// Gray for a gray pair, RGB when the second source is color.
    pub fused: SourceImage,
    /// The decoded plane before any chroma is reattached.
    pub fused_luma: GrayImage,
    /// Set only when the pair went through YCbCr conversion.
    pub used_color_path: bool,
    pub ycbcr: Option<YCbCrImage>,
    pub latents: Option<Latents>,
}

/// Encodes both members, fuses the latents and decodes. A color member is fused
/// through its Y plane and gets its own Cb/Cr back.
pub fn fuse_pipeline(
    model: &AutoEncoder,
    pair: &ImagePair,
    rule: &dyn FusionRule,
    keep_latents: bool,
) -> Result<FusionOutput> {
    if pair.a.dims() != pair.b.dims() {
        return Err(Error::Shape(format!(
            "pair {}: {:?} vs {:?}",
            pair.id,
            pair.a.dims(),
            pair.b.dims()
        )));
    }
    let (luma_b, chroma) = match &pair.b {
        SourceImage::Gray(g) => (g.clone(), None),
        SourceImage::Color(c) => {
            let ycc = rgb_to_ycbcr(c);
            (ycc.y().clone(), Some(ycc))
        }
    };
    let fa = model.encode(&pair.a)?;
    let fb = model.encode(&luma_b)?;
    let ff = rule.fuse(&fa, &fb)?;
    let fused_luma = model.decode(&ff)?;
    let latents = keep_latents.then(|| Latents {
        a: fa,
        b: fb,
        fused: ff,
    });
    let used_color_path = chroma.is_some();
    let (fused, ycbcr) = match chroma {
        None => (SourceImage::Gray(fused_luma.clone()), None),
        Some(ycc) => {
            let out = ycc.with_luma(fused_luma.clone())?;
            (SourceImage::Color(ycbcr_to_rgb(&out)), Some(out))
        }
    };
    Ok(FusionOutput {
        fused,
        fused_luma,
        used_color_path,
        ycbcr,
        latents,
    })
}

#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    pub seed: u64,
    pub checkpoint_id: String,
    /// Writes every fused image as `<dir>/<strategy>/<pair id>.png`.
    pub image_dir: Option<PathBuf>,
}

/// One metric report per strategy name. Metrics compare the fused luma plane
/// against both source planes.
pub fn evaluate(
    model: &AutoEncoder,
    test: &PairedDataset,
    strategies: &[String],
    registry: &FusionRegistry,
    opts: &EvalOptions,
) -> Result<BTreeMap<String, MetricReport>> {
    if strategies.is_empty() {
        return Err(Error::Config("at least one fusion strategy is required".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidInput("test set is empty".into()));
    }
    let rules = strategies
        .iter()
        .map(|s| registry.get(s))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = BTreeMap::new();
    for (name, rule) in strategies.iter().zip(rules) {
        let mut per_pair = BTreeMap::new();
        for pair in &test.pairs {
            let out = fuse_pipeline(model, pair, rule, false)?;
            per_pair.insert(pair.id.clone(), fusion_metrics(&pair.a, &pair.b.luma(), &out.fused_luma)?);
            if let Some(dir) = &opts.image_dir {
                let file = dir.join(name).join(format!("{}.png", pair.id.replace('/', "_")));
                save_source_png(&out.fused, &file)?;
            }
        }
        let meta = RunMetadata {
            seed: opts.seed,
            strategy: name.clone(),
            checkpoint_id: opts.checkpoint_id.clone(),
        };
        reports.insert(name.clone(), MetricReport::new(per_pair, meta)?);
    }
    Ok(reports)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub strategy: String,
    pub pairs: usize,
    pub warmup: usize,
    pub params: usize,
    /// Seconds per pair.
    pub time: MeanStd,
    pub samples: Vec<f64>,
}

impl TimingReport {
    pub fn params_millions(&self) -> f64 {
        self.params as f64 / 1e6
    }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {}", "", self.strategy)?;
        writeln!(f, "{:<10} {:.2}", "Params(M)", self.params_millions())?;
        write!(f, "{:<10} {}", "Time(s)", self.time)
    }
}

/// Times the full pipeline once per pair after [`BENCHMARK_WARMUP`] untimed runs.
pub fn benchmark_fusion_time(model: &AutoEncoder, pairs: &[ImagePair], rule: &dyn FusionRule) -> Result<TimingReport> {
    if pairs.len() < BENCHMARK_MIN_PAIRS {
        return Err(Error::InvalidInput(format!(
            "benchmark needs at least {BENCHMARK_MIN_PAIRS} pairs, got {}",
            pairs.len()
        )));
    }
    for pair in pairs.iter().cycle().take(BENCHMARK_WARMUP) {
        fuse_pipeline(model, pair, rule, false)?;
    }
    let mut samples = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let t = Instant::now();
        let out = fuse_pipeline(model, pair, rule, false)?;
        samples.push(t.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        std::hint::black_box(out);
    }
    Ok(TimingReport {
        strategy: rule.name().to_string(),
        pairs: pairs.len(),
        warmup: BENCHMARK_WARMUP,
        params: model.param_count(),
        time: MeanStd::from_values(&samples)?,
        samples,
    })
}

/// Saves the fused output of one pair as PNG, plus the luma plane for color pairs.
pub fn save_fusion_output(out: &FusionOutput, path: &std::path::Path) -> Result<()> {
    save_source_png(&out.fused, path)?;
    if out.used_color_path {
        save_gray_png(&out.fused_luma, &path.with_extension("y.png"))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::FusionStrategy;
    use crate::imaging::ColorImage;
    use crate::network::ModelConfig;
    use candle_core::{DType, Device};

    fn model() -> AutoEncoder {
        AutoEncoder::new(ModelConfig::compact(), 1, DType::F32, &Device::Cpu).unwrap()
    }

    fn gray(seed: f32) -> GrayImage {
        GrayImage::from_fn(16, 16, |y, x| ((x as f32 + seed) * 0.07 + y as f32 * 0.03).fract()).unwrap()
    }

    fn color() -> ColorImage {
        let px = (0..256)
            .map(|i| [(i % 16) as f32 / 15.0, (i / 16) as f32 / 15.0, 0.3])
            .collect();
        ColorImage::new(16, 16, px).unwrap()
    }

    #[test]
    fn gray_pair_skips_color_path() {
        let pair = ImagePair::new("p", gray(0.0), gray(3.0)).unwrap();
        let out = fuse_pipeline(&model(), &pair, &FusionStrategy::SfnnMax, true).unwrap();
        assert!(!out.used_color_path && out.ycbcr.is_none());
        assert!(matches!(out.fused, SourceImage::Gray(_)));
        let lat = out.latents.unwrap();
        assert_eq!(lat.fused.shape(), lat.a.shape());
    }

    #[test]
    fn color_pair_keeps_source_chroma() {
        let c = color();
        let pair = ImagePair::new("p", gray(0.0), c.clone()).unwrap();
        let out = fuse_pipeline(&model(), &pair, &FusionStrategy::SfnnMean, false).unwrap();
        assert!(out.used_color_path);
        let src = rgb_to_ycbcr(&c);
        let ycc = out.ycbcr.unwrap();
        assert_eq!(ycc.cb(), src.cb());
        assert_eq!(ycc.cr(), src.cr());
        assert_eq!(ycc.y(), &out.fused_luma);
        let SourceImage::Color(rgb) = out.fused else { panic!("expected color output") };
        assert!(rgb.pixels().iter().flatten().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn mismatched_pair_rejected_before_encoding() {
        let pair = ImagePair {
            id: "bad".into(),
            a: gray(0.0),
            b: SourceImage::Gray(GrayImage::filled(32, 16, 0.2).unwrap()),
        };
        assert!(matches!(
            fuse_pipeline(&model(), &pair, &FusionStrategy::SfnnMax, false),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn evaluate_reports_each_strategy() {
        let pairs = (0..2)
            .map(|i| ImagePair::new(format!("p{i}"), gray(i as f32), gray(5.0 + i as f32)).unwrap())
            .collect();
        let data = PairedDataset::new(pairs, "mri", "ct").unwrap();
        let reg = FusionRegistry::default();
        let names: Vec<String> = ["sfnn-max", "sfnn-mean", "sfnn-sum"].map(String::from).into();
        let dir = tempfile::tempdir().unwrap();
        let opts = EvalOptions {
            image_dir: Some(dir.path().to_path_buf()),
            ..EvalOptions::default()
        };
        let reports = evaluate(&model(), &data, &names, &reg, &opts).unwrap();
        assert_eq!(reports.len(), 3);
        assert!(reports.values().all(|r| r.per_pair.len() == 2));
        assert!(dir.path().join("sfnn-sum/p1.png").exists());
        assert!(matches!(evaluate(&model(), &data, &[], &reg, &opts), Err(Error::Config(_))));
        assert!(evaluate(&model(), &data, &["nope".into()], &reg, &opts).is_err());
    }

    #[test]
    fn benchmark_shape() {
        let pairs: Vec<ImagePair> = (0..10)
            .map(|i| ImagePair::new(format!("p{i}"), gray(i as f32), gray(1.0)).unwrap())
            .collect();
        let m = model();
        let r = benchmark_fusion_time(&m, &pairs, &FusionStrategy::SfnnMax).unwrap();
        assert_eq!((r.samples.len(), r.warmup, r.params), (10, 3, m.param_count()));
        assert!(r.time.mean > 0.0);
        let text = r.to_string();
        assert!(text.contains("Params(M)") && text.contains("Time(s)") && text.contains('±'));
        assert!(benchmark_fusion_time(&m, &pairs[..9], &FusionStrategy::SfnnMax).is_err());
    }
}
