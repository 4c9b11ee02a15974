//! 3D volumes: loading, resampling and axial slicing.
//!
//! A [`Volume`] is stored `depth x height x width` with the axial plane on the
//! first axis. NIfTI data is laid out x-fastest, so reading it straight into this
//! layout puts the file's third (z) axis first without any transpose.

use std::path::Path;

use nifti::{NiftiObject, NiftiVolume, ReaderOptions};

use super::GrayImage;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    depth: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(depth: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if depth == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "volume dimensions must be positive, got {depth}x{height}x{width}"
            )));
        }
        if data.len() != depth * height * width {
            return Err(Error::Shape(format!(
                "{} voxels supplied for a {depth}x{height}x{width} volume",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("volume contains non-finite voxels".into()));
        }
        Ok(Self {
            depth,
            height,
            width,
            data,
        })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.depth, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn slice(&self, z: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[z * n..(z + 1) * n]
    }

    #[inline]
    fn at(&self, z: usize, y: usize, x: usize) -> f32 {
        self.data[(z * self.height + y) * self.width + x]
    }
}

/// Rescales voxel intensities linearly onto `[0, 1]`. A constant volume maps to zeros.
pub fn normalize_min_max(volume: &Volume) -> Volume {
    let (lo, hi) = volume
        .data
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let range = hi - lo;
    let data = if range > 0.0 {
        volume
            .data
            .iter()
            .map(|&v| ((v - lo) / range).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; volume.data.len()]
    };
    Volume {
        depth: volume.depth,
        height: volume.height,
        width: volume.width,
        data,
    }
}

/// Trilinear resampling with half-voxel alignment (corners of the sampling grids
/// coincide with voxel edges, not voxel centers).
pub fn resample_trilinear(volume: &Volume, depth: usize, height: usize, width: usize) -> Result<Volume> {
    if depth == 0 || height == 0 || width == 0 {
        return Err(Error::InvalidInput("target dimensions must be positive".into()));
    }
    let taps = |src: usize, dst: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / dst as f64;
        (0..dst)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (pos.floor() as usize).min(src - 1);
                let i1 = (i0 + 1).min(src - 1);
                (i0, i1, (pos - i0 as f64) as f32)
            })
            .collect()
    };
    let tz = taps(volume.depth, depth);
    let ty = taps(volume.height, height);
    let tx = taps(volume.width, width);
    let mut data = Vec::with_capacity(depth * height * width);
    for &(z0, z1, fz) in &tz {
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let lerp = |a: f32, b: f32, t: f32| a + (b - a) * t;
                let plane = |z| {
                    lerp(
                        lerp(volume.at(z, y0, x0), volume.at(z, y0, x1), fx),
                        lerp(volume.at(z, y1, x0), volume.at(z, y1, x1), fx),
                        fy,
                    )
                };
                data.push(lerp(plane(z0), plane(z1), fz));
            }
        }
    }
    Volume::new(depth, height, width, data)
}

/// Indices of axial slices whose nonzero-pixel fraction is at least `min_nonzero_fraction`.
pub fn retained_slice_indices(volume: &Volume, min_nonzero_fraction: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&min_nonzero_fraction) {
        return Err(Error::InvalidInput(format!(
            "min_nonzero_fraction must lie in [0, 1], got {min_nonzero_fraction}"
        )));
    }
    if volume.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidInput("volume values must lie in [0, 1]".into()));
    }
    let per_slice = (volume.height * volume.width) as f64;
    Ok((0..volume.depth)
        .filter(|&z| {
            let nonzero = volume.slice(z).iter().filter(|&&v| v != 0.0).count();
            nonzero as f64 / per_slice >= min_nonzero_fraction
        })
        .collect())
}

/// Axial slices (first axis) passing the nonzero-fraction rule, in order.
pub fn volume_to_slices(volume: &Volume, min_nonzero_fraction: f64) -> Result<Vec<GrayImage>> {
    retained_slice_indices(volume, min_nonzero_fraction)?
        .into_iter()
        .map(|z| GrayImage::new(volume.height, volume.width, volume.slice(z).to_vec()))
        .collect()
}

/// Reads a `.nii` or `.nii.gz` file. Higher dimensions beyond the third must be 1.
pub fn load_nifti(path: &Path) -> Result<Volume> {
    let nifti_err = |e: nifti::NiftiError| Error::InvalidInput(format!("{}: {e}", path.display()));
    let obj = ReaderOptions::new().read_file(path).map_err(nifti_err)?;
    let vol = obj.into_volume();
    let dim: Vec<usize> = vol.dim().iter().map(|&d| d as usize).collect();
    if dim.len() < 3 || dim[3..].iter().any(|&d| d != 1) {
        return Err(Error::Shape(format!(
            "{}: expected a 3D volume, got dimensions {dim:?}",
            path.display()
        )));
    }
    let data: Vec<f32> = vol.into_nifti_typed_data().map_err(nifti_err)?;
    Volume::new(dim[2], dim[1], dim[0], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol_from_slices(slices: &[Vec<f32>], h: usize, w: usize) -> Volume {
        Volume::new(slices.len(), h, w, slices.concat()).unwrap()
    }

    #[test]
    fn all_zero_volume_yields_nothing() {
        let v = Volume::new(3, 8, 8, vec![0.0; 192]).unwrap();
        assert!(volume_to_slices(&v, 0.1).unwrap().is_empty());
    }

    #[test]
    fn exactly_ten_percent_is_kept() {
        let mut s = vec![0.0; 100];
        s[..10].iter_mut().for_each(|v| *v = 0.7);
        let v = vol_from_slices(&[vec![0.0; 100], s.clone()], 10, 10);
        let out = volume_to_slices(&v, 0.1).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].pixels(), &s[..]);
    }

    #[test]
    fn keeps_full_slices_in_order() {
        let one = vec![1.0; 64];
        let zero = vec![0.0; 64];
        let mut marked = one.clone();
        marked[0] = 0.5;
        let v = vol_from_slices(&[zero.clone(), marked.clone(), zero, one.clone()], 8, 8);
        let out = volume_to_slices(&v, 0.1).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].pixels(), &marked[..]);
        assert_eq!(out[1].pixels(), &one[..]);
    }

    #[test]
    fn rejects_bad_threshold_and_range() {
        let v = Volume::new(1, 2, 2, vec![0.0; 4]).unwrap();
        assert!(volume_to_slices(&v, 1.5).is_err());
        let v = Volume::new(1, 2, 2, vec![2.0; 4]).unwrap();
        assert!(volume_to_slices(&v, 0.1).is_err());
    }

    #[test]
    fn count_monotone_in_threshold() {
        let slices: Vec<Vec<f32>> = (0..10)
            .map(|k| (0..25).map(|i| if i < k * 3 { 0.5 } else { 0.0 }).collect())
            .collect();
        let v = vol_from_slices(&slices, 5, 5);
        let mut last = usize::MAX;
        for t in 0..=20 {
            let n = volume_to_slices(&v, t as f64 / 20.0).unwrap().len();
            assert!(n <= last);
            last = n;
        }
    }

    #[test]
    fn resample_identity_and_constant() {
        let data: Vec<f32> = (0..24).map(|i| i as f32 / 23.0).collect();
        let v = Volume::new(2, 3, 4, data).unwrap();
        assert_eq!(resample_trilinear(&v, 2, 3, 4).unwrap(), v);
        let c = Volume::new(4, 4, 4, vec![0.25; 64]).unwrap();
        let r = resample_trilinear(&c, 7, 5, 3).unwrap();
        assert!(r.data().iter().all(|&x| (x - 0.25).abs() < 1e-7));
    }

    #[test]
    fn resample_upsample_interpolates_linearly() {
        // A ramp along x, doubled: interior outputs sit between neighbors.
        let v = Volume::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let r = resample_trilinear(&v, 1, 1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn min_max_normalization() {
        let v = Volume::new(1, 1, 3, vec![10.0, 20.0, 30.0]).unwrap();
        assert_eq!(normalize_min_max(&v).data(), &[0.0, 0.5, 1.0]);
    }

    pub(crate) fn write_nifti_f32(path: &Path, dims: [u16; 3], data: &[f32]) {
        let mut hdr = vec![0u8; 352];
        hdr[0..4].copy_from_slice(&348i32.to_le_bytes());
        let dim: [i16; 8] = [3, dims[0] as i16, dims[1] as i16, dims[2] as i16, 1, 1, 1, 1];
        for (i, d) in dim.iter().enumerate() {
            hdr[40 + 2 * i..42 + 2 * i].copy_from_slice(&d.to_le_bytes());
        }
        hdr[70..72].copy_from_slice(&16i16.to_le_bytes());
        hdr[72..74].copy_from_slice(&32i16.to_le_bytes());
        for i in 0..8 {
            hdr[76 + 4 * i..80 + 4 * i].copy_from_slice(&1f32.to_le_bytes());
        }
        hdr[108..112].copy_from_slice(&352f32.to_le_bytes());
        hdr[112..116].copy_from_slice(&1f32.to_le_bytes());
        hdr[344..348].copy_from_slice(b"n+1\0");
        for v in data {
            hdr.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, hdr).unwrap();
    }

    #[test]
    fn nifti_axial_axis_comes_first() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.nii");
        // x = 4, y = 3, z = 2; value encodes its coordinates.
        let mut data = Vec::new();
        for z in 0..2 {
            for y in 0..3 {
                for x in 0..4 {
                    data.push((100 * z + 10 * y + x) as f32);
                }
            }
        }
        write_nifti_f32(&p, [4, 3, 2], &data);
        let v = load_nifti(&p).unwrap();
        assert_eq!(v.dims(), (2, 3, 4));
        assert_eq!(v.at(1, 2, 3), 123.0);
        assert_eq!(v.at(0, 1, 2), 12.0);
    }
}
