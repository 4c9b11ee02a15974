//! Feature similarity (FSIM) on phase congruency and gradient magnitude,
//! following the reference implementation of Zhang et al.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::Result;
use crate::imaging::GrayImage;

const NSCALE: usize = 4;
const NORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ON_F: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const EPSILON: f64 = 1e-4;
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;
const T1: f64 = 0.85;
const T2: f64 = 160.0;

/// Row-major real plane.
#[derive(Clone)]
struct Plane {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, r: isize, c: isize) -> f64 {
        if r < 0 || c < 0 || r >= self.rows as isize || c >= self.cols as isize {
            0.0
        } else {
            self.data[r as usize * self.cols + c as usize]
        }
    }
}

fn fft2(buf: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool, planner: &mut FftPlanner<f64>) {
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for row in buf.chunks_exact_mut(cols) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = buf[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            buf[r * cols + c] = column[r];
        }
    }
    if inverse {
        let scale = 1.0 / (rows * cols) as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Normalized frequency of FFT bin `i` out of `n`, matching the shifted
/// `[-n/2, n/2)` grid (odd sizes divide by `n - 1`).
fn frequency(i: usize, n: usize) -> f64 {
    let j = (i + n / 2) % n;
    if n % 2 == 1 {
        (j as f64 - (n - 1) as f64 / 2.0) / (n - 1).max(1) as f64
    } else {
        (j as f64 - (n / 2) as f64) / n as f64
    }
}

/// Phase congruency map over 4 scales and 4 orientations.
fn phase_congruency(img: &Plane, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let (rows, cols) = (img.rows, img.cols);
    let n = rows * cols;
    let mut spectrum: Vec<Complex<f64>> = img.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut spectrum, rows, cols, false, planner);

    let mut radius = vec![0.0; n];
    let mut sin_t = vec![0.0; n];
    let mut cos_t = vec![0.0; n];
    let mut lowpass = vec![0.0; n];
    for r in 0..rows {
        let y = frequency(r, rows);
        for c in 0..cols {
            let x = frequency(c, cols);
            let i = r * cols + c;
            let rad = (x * x + y * y).sqrt();
            lowpass[i] = 1.0 / (1.0 + (rad / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER));
            radius[i] = rad;
            let theta = (-y).atan2(x);
            sin_t[i] = theta.sin();
            cos_t[i] = theta.cos();
        }
    }
    radius[0] = 1.0;

    let log_gabor: Vec<Vec<f64>> = (0..NSCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let denom = 2.0 * SIGMA_ON_F.ln().powi(2);
            let mut g: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&rad, &lp)| (-(rad / fo).ln().powi(2) / denom).exp() * lp)
                .collect();
            g[0] = 0.0;
            g
        })
        .collect();

    let theta_sigma = PI / NORIENT as f64 / D_THETA_ON_SIGMA;
    let mut energy_all = vec![0.0; n];
    let mut an_all = vec![0.0; n];
    for o in 0..NORIENT {
        let angle = o as f64 * PI / NORIENT as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = (0..n)
            .map(|i| {
                let ds = sin_t[i] * ca - cos_t[i] * sa;
                let dc = cos_t[i] * ca + sin_t[i] * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut eo: Vec<Vec<Complex<f64>>> = Vec::with_capacity(NSCALE);
        let mut spatial_filters: Vec<Vec<f64>> = Vec::with_capacity(NSCALE);
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            let mut f: Vec<Complex<f64>> = filter.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft2(&mut f, rows, cols, true, planner);
            let scale = (n as f64).sqrt();
            spatial_filters.push(f.iter().map(|v| v.re * scale).collect());

            let mut resp: Vec<Complex<f64>> = spectrum.iter().zip(&filter).map(|(z, &w)| z * w).collect();
            fft2(&mut resp, rows, cols, true, planner);
            for i in 0..n {
                sum_an[i] += resp[i].norm();
                sum_e[i] += resp[i].re;
                sum_o[i] += resp[i].im;
            }
            eo.push(resp);
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPSILON;
            let (mean_e, mean_o) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for resp in &eo {
                let (e, od) = (resp[i].re, resp[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }

        let mut e2: Vec<f64> = eo[0].iter().map(|z| z.norm_sqr()).collect();
        let median_e2n = median(&mut e2);
        let mean_e2n = -median_e2n / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;

        let mut sum_an2 = 0.0;
        let mut sum_aiaj = 0.0;
        for i in 0..n {
            for si in 0..NSCALE {
                sum_an2 += spatial_filters[si][i].powi(2);
                for sj in si + 1..NSCALE {
                    sum_aiaj += spatial_filters[si][i] * spatial_filters[sj][i];
                }
            }
        }
        let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
        let tau = (noise_energy2 / 2.0).sqrt();
        let noise_mean = tau * (PI / 2.0).sqrt();
        let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let t = (noise_mean + NOISE_K * noise_sigma) / 1.7;

        for i in 0..n {
            energy_all[i] += (energy[i] - t).max(0.0);
            an_all[i] += sum_an[i];
        }
    }
    energy_all
        .iter()
        .zip(&an_all)
        .map(|(&e, &a)| if a > 0.0 { e / a } else { 0.0 })
        .collect()
}

fn median(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (_, &mut upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    if n % 2 == 1 {
        upper
    } else {
        let lower = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// Box-filters with an `f x f` kernel (zero padding, centered as in a `'same'`
/// convolution) and keeps every `f`-th sample.
fn downsample(img: &Plane, f: usize) -> Plane {
    if f == 1 {
        return img.clone();
    }
    let off = (f / 2) as isize;
    let rows: Vec<usize> = (0..img.rows).step_by(f).collect();
    let cols: Vec<usize> = (0..img.cols).step_by(f).collect();
    let norm = 1.0 / (f * f) as f64;
    let mut data = Vec::with_capacity(rows.len() * cols.len());
    for &r in &rows {
        for &c in &cols {
            let mut s = 0.0;
            for a in 0..f as isize {
                for b in 0..f as isize {
                    s += img.at(r as isize + off - a, c as isize + off - b);
                }
            }
            data.push(s * norm);
        }
    }
    Plane {
        rows: rows.len(),
        cols: cols.len(),
        data,
    }
}

/// Scharr-like gradient magnitude with zero padding.
fn gradient_magnitude(img: &Plane) -> Vec<f64> {
    const K: [[f64; 3]; 3] = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let mut out = Vec::with_capacity(img.data.len());
    for r in 0..img.rows as isize {
        for c in 0..img.cols as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for a in 0..3 {
                for b in 0..3 {
                    let v = img.at(r + 1 - a as isize, c + 1 - b as isize);
                    gx += K[a][b] * v;
                    gy += K[b][a] * v;
                }
            }
            out.push((gx * gx + gy * gy).sqrt() / 16.0);
        }
    }
    out
}

/// FSIM of two same-sized gray images. In `[0, 1]`; 1 for identical inputs.
pub fn fsim(a: &GrayImage, b: &GrayImage) -> Result<f64> {
    a.ensure_same_dims(b, "fsim")?;
    let (rows, cols) = a.dims();
    let to_plane = |img: &GrayImage| Plane {
        rows,
        cols,
        data: img.pixels().iter().map(|&v| f64::from(v) * 255.0).collect(),
    };
    let f = ((rows.min(cols) as f64 / 256.0).round() as usize).max(1);
    let (ya, yb) = (downsample(&to_plane(a), f), downsample(&to_plane(b), f));

    let mut planner = FftPlanner::new();
    let pc_a = phase_congruency(&ya, &mut planner);
    let pc_b = phase_congruency(&yb, &mut planner);
    let g_a = gradient_magnitude(&ya);
    let g_b = gradient_magnitude(&yb);

    let (mut num, mut den, mut unweighted) = (0.0, 0.0, 0.0);
    for i in 0..pc_a.len() {
        let pc_sim = (2.0 * pc_a[i] * pc_b[i] + T1) / (pc_a[i].powi(2) + pc_b[i].powi(2) + T1);
        let g_sim = (2.0 * g_a[i] * g_b[i] + T2) / (g_a[i].powi(2) + g_b[i].powi(2) + T2);
        let pcm = pc_a[i].max(pc_b[i]);
        num += g_sim * pc_sim * pcm;
        den += pcm;
        unweighted += g_sim * pc_sim;
    }
    // Featureless images (zero phase congruency everywhere) fall back to the plain mean.
    Ok(if den > 0.0 {
        num / den
    } else {
        unweighted / pc_a.len() as f64
    })
}
