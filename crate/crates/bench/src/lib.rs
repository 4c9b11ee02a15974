//! Deterministic fixtures shared by the benchmarks.

use medfuse_core::imaging::{ColorImage, GrayImage, ImagePair};
use medfuse_core::network::FeatureMap;

/// Smooth blob-and-wave test image.
pub fn gray_image(size: usize, seed: u32) -> GrayImage {
    let s = seed as f32;
    GrayImage::from_fn(size, size, |y, x| {
        let (u, v) = (x as f32 / size as f32, y as f32 / size as f32);
        let blob = (-((u - 0.4 - 0.03 * s).powi(2) + (v - 0.5).powi(2)) / 0.05).exp();
        (0.2 + 0.5 * blob + 0.15 * ((7.0 + s) * u + 3.0 * v).sin()).clamp(0.0, 1.0)
    })
    .expect("valid size")
}

pub fn color_image(size: usize, seed: u32) -> ColorImage {
    let g = gray_image(size, seed + 7);
    let px = g.pixels().iter().map(|&v| [v, 0.5 * v + 0.2, 1.0 - v]).collect();
    ColorImage::new(size, size, px).expect("valid size")
}

pub fn gray_pair(size: usize, seed: u32) -> ImagePair {
    ImagePair::new(format!("g{seed}"), gray_image(size, seed), gray_image(size, seed + 3)).expect("same size")
}

pub fn color_pair(size: usize, seed: u32) -> ImagePair {
    ImagePair::new(format!("c{seed}"), gray_image(size, seed), color_image(size, seed)).expect("same size")
}

/// Batch-one latent with a fixed pseudo-random pattern.
pub fn feature_map(channels: usize, size: usize, seed: u64) -> FeatureMap {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..channels * size * size)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    FeatureMap::new([1, channels, size, size], data).expect("consistent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic() {
        assert_eq!(gray_image(16, 1), gray_image(16, 1));
        assert_eq!(feature_map(2, 4, 9).data(), feature_map(2, 4, 9).data());
        assert!(feature_map(2, 4, 9).data().iter().all(|v| (-1.0..1.0).contains(v)));
    }
}
