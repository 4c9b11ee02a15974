use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use super::{ColorImage, GrayImage, SourceImage};
use crate::error::{Error, Result};

/// Maps an 8-bit intensity plane (row-major) onto `[0, 1]` by dividing by 255.
pub fn normalize_intensity(height: usize, width: usize, raw: &[i32]) -> Result<GrayImage> {
    if let Some((i, v)) = raw
        .iter()
        .enumerate()
        .find(|(_, v)| !(0..=255).contains(*v))
    {
        return Err(Error::InvalidInput(format!(
            "raw intensity {v} at index {i} is outside [0, 255]"
        )));
    }
    GrayImage::new(
        height,
        width,
        raw.iter().map(|&v| v as f32 / 255.0).collect(),
    )
}

/// Loads a raster file. Single-channel data becomes [`SourceImage::Gray`], anything
/// with color channels becomes [`SourceImage::Color`] (alpha is dropped). Values are
/// divided by the maximum of the stored bit depth.
pub fn load_source_image(path: &Path) -> Result<SourceImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let source = match img {
        DynamicImage::ImageLuma8(buf) => {
            let raw: Vec<i32> = buf.into_raw().into_iter().map(i32::from).collect();
            SourceImage::Gray(normalize_intensity(h, w, &raw)?)
        }
        DynamicImage::ImageLumaA8(_) => {
            let buf = img.to_luma8();
            let raw: Vec<i32> = buf.into_raw().into_iter().map(i32::from).collect();
            SourceImage::Gray(normalize_intensity(h, w, &raw)?)
        }
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            let buf = img.to_luma16();
            SourceImage::Gray(GrayImage::new(
                h,
                w,
                buf.into_raw()
                    .into_iter()
                    .map(|v| f32::from(v) / 65535.0)
                    .collect(),
            )?)
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            let buf = img.to_rgb16();
            let px = buf
                .pixels()
                .map(|p| p.0.map(|c| f32::from(c) / 65535.0))
                .collect();
            SourceImage::Color(ColorImage::new(h, w, px)?)
        }
        other => {
            let buf = other.to_rgb8();
            let px = buf
                .pixels()
                .map(|p| p.0.map(|c| f32::from(c) / 255.0))
                .collect();
            SourceImage::Color(ColorImage::new(h, w, px)?)
        }
    };
    Ok(source)
}

#[inline]
fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

pub fn save_gray_png(img: &GrayImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels().iter().map(|&v| quantize(v)).collect(),
    )
    .ok_or_else(|| Error::Shape("gray buffer size".into()))?;
    ensure_parent(path)?;
    buf.save(path)?;
    Ok(())
}

pub fn save_color_png(img: &ColorImage, path: &Path) -> Result<()> {
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(
        img.width() as u32,
        img.height() as u32,
        img.pixels()
            .iter()
            .flat_map(|p| p.map(quantize))
            .collect(),
    )
    .ok_or_else(|| Error::Shape("color buffer size".into()))?;
    ensure_parent(path)?;
    buf.save(path)?;
    Ok(())
}

pub fn save_source_png(img: &SourceImage, path: &Path) -> Result<()> {
    match img {
        SourceImage::Gray(g) => save_gray_png(g, path),
        SourceImage::Color(c) => save_color_png(c, path),
    }
}
