use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage};

use super::DatasetError;
use crate::raster::BinaryMask;

/// Loads a lesion mask: a pixel is set when any colour channel is nonzero
/// (alpha is ignored). `expected` is the paired slice's `(width, height)`.
pub fn load_mask(path: &Path, expected: Option<(u32, u32)>) -> Result<BinaryMask, DatasetError> {
    let img = image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let mask = mask_from_image(&img);
    if let Some((w, h)) = expected {
        if mask.dims() != (w, h) {
            return Err(DatasetError::DimensionMismatch {
                path: path.to_path_buf(),
                expected_width: w,
                expected_height: h,
                width: mask.width(),
                height: mask.height(),
            });
        }
    }
    Ok(mask)
}

pub fn mask_from_image(img: &DynamicImage) -> BinaryMask {
    let (w, h) = (img.width(), img.height());
    let color = img.color();
    let channels = color.channel_count() as usize;
    let colour_channels = if color.has_alpha() { channels - 1 } else { channels };
    let bytes_per_sample = color.bytes_per_pixel() as usize / channels;
    let raw = img.as_bytes();
    let pixel_bytes = channels * bytes_per_sample;
    let bits = raw
        .chunks_exact(pixel_bytes)
        .map(|px| px[..colour_channels * bytes_per_sample].iter().any(|&b| b != 0))
        .collect();
    BinaryMask::from_bits(w, h, bits).expect("decoded image covers its frame")
}

/// Writes `mask` as an 8-bit PNG with 255 for set pixels.
pub fn write_mask(path: &Path, mask: &BinaryMask) -> Result<(), DatasetError> {
    let buf = GrayImage::from_raw(
        mask.width(),
        mask.height(),
        mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect(),
    )
    .expect("mask covers its frame");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    }
    buf.save(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })
}
