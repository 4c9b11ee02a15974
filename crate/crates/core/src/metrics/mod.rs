//! Fusion quality metrics and their aggregation.

mod fsim;
mod report;

pub use fsim::fsim;
pub use report::{aggregate_runs, MeanStd, MetricRecord, MetricReport, MetricSummary, RunMetadata};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

/// Value returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: &GrayImage, test: &GrayImage) -> Result<f64> {
    reference.ensure_same_dims(test, "psnr")?;
    let mse = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        / reference.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable Gaussian filtering keeping only fully covered positions.
fn filter_valid(data: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * data[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over an 11x11 Gaussian window (sigma 1.5), dynamic range 1.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.ensure_same_dims(b, "ssim")?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let k = gaussian_window();
    let (x, y) = (a.to_f64(), b.to_f64());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, h, w, &k);
    let mu_y = filter_valid(&y, h, w, &k);
    let xx = filter_valid(&prod(&x, &x), h, w, &k);
    let yy = filter_valid(&prod(&y, &y), h, w, &k);
    let xy = filter_valid(&prod(&x, &y), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let sxx = xx[i] - mx * mx;
            let syy = yy[i] - my * my;
            let sxy = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

fn histogram_entropy(counts: &[u64]) -> f64 {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Shannon entropy in bits of the 256-level intensity histogram (`round(255 v)`).
pub fn entropy(img: &GrayImage) -> f64 {
    let mut counts = [0u64; 256];
    for &v in img.pixels() {
        counts[(f64::from(v) * 255.0).round().clamp(0.0, 255.0) as usize] += 1;
    }
    histogram_entropy(&counts)
}

/// Sobel gradient magnitude (replicated borders) quantized into 256 levels by its
/// own min-max range.
fn gradient_levels(img: &GrayImage) -> Vec<u8> {
    let (h, w) = img.dims();
    let px = |y: isize, x: isize| {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        f64::from(img.get(yy, xx))
    };
    let mut mag = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let gx = px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1)
                - px(y - 1, x - 1)
                - 2.0 * px(y, x - 1)
                - px(y + 1, x - 1);
            let gy = px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1)
                - px(y - 1, x - 1)
                - 2.0 * px(y - 1, x)
                - px(y - 1, x + 1);
            mag.push((gx * gx + gy * gy).sqrt());
        }
    }
    let lo = mag.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    mag.iter()
        .map(|&m| if span > 0.0 { ((m - lo) / span * 255.0).round() as u8 } else { 0 })
        .collect()
}

/// `I(p; q) / (H(p) + H(q))`, in `[0, 0.5]`. Two constant signals score 0.5.
fn normalized_mutual_information(p: &[u8], q: &[u8]) -> f64 {
    let mut joint = vec![0u64; 256 * 256];
    let mut hp = [0u64; 256];
    let mut hq = [0u64; 256];
    for (&a, &b) in p.iter().zip(q) {
        joint[a as usize * 256 + b as usize] += 1;
        hp[a as usize] += 1;
        hq[b as usize] += 1;
    }
    let (ep, eq) = (histogram_entropy(&hp), histogram_entropy(&hq));
    if ep + eq == 0.0 {
        return 0.5;
    }
    let mi = ep + eq - histogram_entropy(&joint);
    (mi / (ep + eq)).clamp(0.0, 0.5)
}

/// Feature mutual information of the fused image with both sources, on gradient
/// magnitude features. In `[0, 1]`, symmetric in the two sources.
pub fn fmi(source_a: &GrayImage, source_b: &GrayImage, fused: &GrayImage) -> Result<f64> {
    source_a.ensure_same_dims(fused, "fmi")?;
    source_b.ensure_same_dims(fused, "fmi")?;
    let f = gradient_levels(fused);
    Ok(normalized_mutual_information(&gradient_levels(source_a), &f)
        + normalized_mutual_information(&gradient_levels(source_b), &f))
}

/// All five metrics for one fused image: PSNR, SSIM and FSIM averaged over the two
/// sources, FMI over both jointly, EN of the fused image alone.
pub fn fusion_metrics(source_a: &GrayImage, source_b: &GrayImage, fused: &GrayImage) -> Result<MetricRecord> {
    Ok(MetricRecord {
        psnr: (psnr(source_a, fused)? + psnr(source_b, fused)?) / 2.0,
        ssim: (ssim(source_a, fused)? + ssim(source_b, fused)?) / 2.0,
        fmi: fmi(source_a, source_b, fused)?,
        fsim: (fsim(source_a, fused)? + fsim(source_b, fused)?) / 2.0,
        en: entropy(fused),
    })
}
