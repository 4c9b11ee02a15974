//! Full-range ITU-R BT.601 YCbCr with chroma centered on 0.5.

use super::{ColorImage, GrayImage, YCbCrImage};

const KR: f64 = 0.299;
const KG: f64 = 0.587;
const KB: f64 = 0.114;

#[inline]
fn clamp01(v: f64) -> f32 {
    v.clamp(0.0, 1.0) as f32
}

pub fn rgb_to_ycbcr(img: &ColorImage) -> YCbCrImage {
    let n = img.pixels().len();
    let (mut y, mut cb, mut cr) = (
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    );
    for &[r, g, b] in img.pixels() {
        let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
        let luma = KR * r + KG * g + KB * b;
        y.push(clamp01(luma));
        cb.push(clamp01(0.5 + (b - luma) / (2.0 * (1.0 - KB))));
        cr.push(clamp01(0.5 + (r - luma) / (2.0 * (1.0 - KR))));
    }
    let (h, w) = img.dims();
    // Every plane is clamped into [0, 1] and sized h*w, so construction cannot fail.
    YCbCrImage::new(
        GrayImage::new(h, w, y).expect("luma plane"),
        GrayImage::new(h, w, cb).expect("cb plane"),
        GrayImage::new(h, w, cr).expect("cr plane"),
    )
    .expect("planes share dimensions")
}

/// Inverse transform; components that leave the RGB gamut are clamped to `[0, 1]`.
pub fn ycbcr_to_rgb(img: &YCbCrImage) -> ColorImage {
    let pixels = img
        .y()
        .pixels()
        .iter()
        .zip(img.cb().pixels())
        .zip(img.cr().pixels())
        .map(|((&y, &cb), &cr)| {
            let y = f64::from(y);
            let cb = f64::from(cb) - 0.5;
            let cr = f64::from(cr) - 0.5;
            let r = y + 2.0 * (1.0 - KR) * cr;
            let b = y + 2.0 * (1.0 - KB) * cb;
            let g = (y - KR * r - KB * b) / KG;
            [clamp01(r), clamp01(g), clamp01(b)]
        })
        .collect();
    let (h, w) = img.y().dims();
    ColorImage::new(h, w, pixels).expect("clamped components")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn solid(rgb: [f32; 3]) -> ColorImage {
        ColorImage::new(2, 2, vec![rgb; 4]).unwrap()
    }

    fn close(a: f32, b: f32) -> bool {
        (a - b).abs() < 1e-6
    }

    #[test]
    fn white_black_and_grays() {
        let w = rgb_to_ycbcr(&solid([1.0, 1.0, 1.0]));
        assert!(close(w.y().get(0, 0), 1.0));
        assert!(close(w.cb().get(0, 0), 0.5));
        assert!(close(w.cr().get(0, 0), 0.5));

        let k = rgb_to_ycbcr(&solid([0.0, 0.0, 0.0]));
        assert_eq!(k.y().get(1, 1), 0.0);
        assert!(close(k.cb().get(1, 1), 0.5));
        assert!(close(k.cr().get(1, 1), 0.5));

        for g in [0.1f32, 0.37, 0.8] {
            let c = rgb_to_ycbcr(&solid([g, g, g]));
            assert!(close(c.y().get(0, 1), g));
            assert!(close(c.cb().get(0, 1), 0.5));
            assert!(close(c.cr().get(0, 1), 0.5));
        }
    }

    #[test]
    fn inverse_of_white_and_black() {
        let plane = |v| GrayImage::filled(2, 2, v).unwrap();
        let white = ycbcr_to_rgb(&YCbCrImage::new(plane(1.0), plane(0.5), plane(0.5)).unwrap());
        assert!(white.pixels()[0].iter().all(|&c| close(c, 1.0)));
        let black = ycbcr_to_rgb(&YCbCrImage::new(plane(0.0), plane(0.5), plane(0.5)).unwrap());
        assert!(black.pixels()[3].iter().all(|&c| close(c, 0.0)));
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let plane = |v| GrayImage::filled(1, 1, v).unwrap();
        let c = ycbcr_to_rgb(&YCbCrImage::new(plane(1.0), plane(1.0), plane(1.0)).unwrap());
        assert!(c.pixels()[0].iter().all(|c| (0.0..=1.0).contains(c)));
        assert_eq!(c.pixels()[0][0], 1.0);
    }

    proptest! {
        #[test]
        fn round_trip_within_tolerance(px in proptest::collection::vec(
            (0.0f32..=1.0, 0.0f32..=1.0, 0.0f32..=1.0), 16)) {
            let img = ColorImage::new(4, 4, px.iter().map(|&(r, g, b)| [r, g, b]).collect()).unwrap();
            let back = ycbcr_to_rgb(&rgb_to_ycbcr(&img));
            for (a, b) in img.pixels().iter().zip(back.pixels()) {
                for c in 0..3 {
                    prop_assert!((a[c] - b[c]).abs() < 1e-3);
                }
            }
        }
    }
}
