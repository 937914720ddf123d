use std::path::Path;

use image::{GrayImage, Luma};
use ndarray::Array2;

use crate::error::{shape_err, Error, Result};

/// 8-bit code for an intensity in `[0, 1]`, rounding half up.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

fn to_image(rows: usize, cols: usize, f: impl Fn(usize, usize) -> u8) -> Result<GrayImage> {
    let (w, h) = (
        u32::try_from(cols).map_err(|_| shape_err!("width {cols} too large"))?,
        u32::try_from(rows).map_err(|_| shape_err!("height {rows} too large"))?,
    );
    Ok(GrayImage::from_fn(w, h, |x, y| Luma([f(y as usize, x as usize)])))
}

fn save(img: &GrayImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image(other),
        })
}

fn load(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })?;
    Ok(img.into_luma8())
}

/// Writes intensities in `[0, 1]` as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, field: &Array2<f64>) -> Result<()> {
    let (rows, cols) = field.dim();
    save(&to_image(rows, cols, |y, x| quantize(field[(y, x)]))?, path)
}

/// Reads a PNG (any colour type, converted to luma) as intensities in `[0, 1]`.
pub fn read_gray_png(path: &Path) -> Result<Array2<f64>> {
    let img = load(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] as f64 / 255.0
    }))
}

/// Writes a mask as 0/255.
pub fn write_mask_png(path: &Path, mask: &Array2<bool>) -> Result<()> {
    let (rows, cols) = mask.dim();
    save(&to_image(rows, cols, |y, x| if mask[(y, x)] { 255 } else { 0 })?, path)
}

/// Reads a mask; codes above 127 are valid.
pub fn read_mask_png(path: &Path) -> Result<Array2<bool>> {
    let img = load(path)?;
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] > 127
    }))
}
