//! PNG export: values in [0, 1] map linearly to 8-bit monochrome; values
//! outside the interval are clamped.

use std::path::Path;

use anyhow::{Context, Result};
use image::{GrayImage, Luma};
use ndarray::Array2;

pub fn save_png(path: &Path, img: &Array2<f32>) -> Result<()> {
    let (h, w) = img.dim();
    let mut out = GrayImage::new(w as u32, h as u32);
    for ((i, j), &v) in img.indexed_iter() {
        let byte = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.put_pixel(j as u32, i as u32, Luma([byte]));
    }
    out.save(path)
        .with_context(|| format!("writing PNG {}", path.display()))
}

/// Save after rescaling by the image's own maximum (for maps like the
/// per-pixel uncertainty whose natural range is not [0, 1]).
pub fn save_png_autoscale(path: &Path, img: &Array2<f32>) -> Result<()> {
    let max = img.iter().copied().fold(0.0f32, f32::max);
    if max > 0.0 {
        save_png(path, &img.mapv(|v| v / max))
    } else {
        save_png(path, img)
    }
}
