//! Image containers, color conversion, volume slicing and paired datasets.
//!
//! Every plane handed to the rest of the crate is normalized to `[0, 1]`.

mod color;
mod dataset;
mod io;
mod volume;

pub use color::{rgb_to_ycbcr, ycbcr_to_rgb};
pub use dataset::{
    pair_directory, split_dataset, split_indices, DatasetManifest, ImagePair, ManifestRecord,
    PairedDataset, Split,
};
pub use io::{
    load_source_image, normalize_intensity, save_color_png, save_gray_png, save_source_png,
};
pub use volume::{
    load_nifti, normalize_min_max, resample_trilinear, retained_slice_indices, volume_to_slices,
    Volume,
};

use crate::error::{Error, Result};

/// A single-channel image plane with every pixel in `[0, 1]`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels supplied for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(Error::InvalidInput(format!(
                "pixel {i} has value {v}, expected a value in [0, 1]"
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`. NaN maps to 0.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f32>) -> Result<Self> {
        for v in pixels.iter_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, pixels)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(y, x));
            }
        }
        Self::new(height, width, pixels)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Pixels widened to `f64`, the precision every metric works in.
    pub fn to_f64(&self) -> Vec<f64> {
        self.pixels.iter().map(|&v| f64::from(v)).collect()
    }

    pub(crate) fn ensure_same_dims(&self, other: &GrayImage, what: &str) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// An RGB image with interleaved components in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorImage {
    height: usize,
    width: usize,
    pixels: Vec<[f32; 3]>,
}

impl ColorImage {
    pub fn new(height: usize, width: usize, pixels: Vec<[f32; 3]>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels supplied for a {height}x{width} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels
            .iter()
            .position(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidInput(format!(
                "pixel {i} has component outside [0, 1]: {:?}",
                pixels[i]
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f32; 3]] {
        &self.pixels
    }
}

/// Luma plus chroma planes, all of identical size and in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct YCbCrImage {
    y: GrayImage,
    cb: GrayImage,
    cr: GrayImage,
}

impl YCbCrImage {
    pub fn new(y: GrayImage, cb: GrayImage, cr: GrayImage) -> Result<Self> {
        y.ensure_same_dims(&cb, "Y and Cb planes differ")?;
        y.ensure_same_dims(&cr, "Y and Cr planes differ")?;
        Ok(Self { y, cb, cr })
    }

    pub fn y(&self) -> &GrayImage {
        &self.y
    }

    pub fn cb(&self) -> &GrayImage {
        &self.cb
    }

    pub fn cr(&self) -> &GrayImage {
        &self.cr
    }

    /// Replaces the luma plane, keeping the chroma planes untouched.
    pub fn with_luma(&self, y: GrayImage) -> Result<Self> {
        Self::new(y, self.cb.clone(), self.cr.clone())
    }

    pub fn into_planes(self) -> (GrayImage, GrayImage, GrayImage) {
        (self.y, self.cb, self.cr)
    }
}

/// The second member of a pair may be grayscale (CT, MRI) or color (SPECT).
#[derive(Clone, Debug, PartialEq)]
pub enum SourceImage {
    Gray(GrayImage),
    Color(ColorImage),
}

impl SourceImage {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            SourceImage::Gray(g) => g.dims(),
            SourceImage::Color(c) => c.dims(),
        }
    }

    pub fn is_color(&self) -> bool {
        matches!(self, SourceImage::Color(_))
    }

    /// The plane the network sees: the image itself, or the Y channel of a color image.
    pub fn luma(&self) -> GrayImage {
        match self {
            SourceImage::Gray(g) => g.clone(),
            SourceImage::Color(c) => rgb_to_ycbcr(c).y().clone(),
        }
    }
}

impl From<GrayImage> for SourceImage {
    fn from(g: GrayImage) -> Self {
        SourceImage::Gray(g)
    }
}

impl From<ColorImage> for SourceImage {
    fn from(c: ColorImage) -> Self {
        SourceImage::Color(c)
    }
}
