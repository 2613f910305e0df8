use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use ndarray::Array2;
use nifti::{IntoNdArray, NiftiObject, NiftiVolume, ReaderOptions};
use serde::{Deserialize, Serialize};

use super::DatasetError;
use crate::imaging::{CtSlice, Rescale, SliceId};

/// On-disk layout of a CT slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SliceFormat {
    /// Single-channel 16-bit PNG of stored values; `<stem>.json` carries the
    /// rescale parameters and slice identity.
    #[default]
    Raster16,
    /// NIfTI-1 (`.nii` or `.nii.gz`); `slice` selects the z index of a 3D volume.
    Nifti {
        #[serde(default)]
        slice: usize,
    },
}

/// JSON sidecar of a [`SliceFormat::Raster16`] slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterSidecar {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice_id: Option<String>,
    pub patient_id: String,
    pub slice_index: i64,
    #[serde(default = "one")]
    pub rescale_slope: f64,
    #[serde(default)]
    pub rescale_intercept: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_spacing_mm: Option<(f64, f64)>,
}

fn one() -> f64 {
    1.0
}

pub(crate) fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

fn file_stem(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    name.trim_end_matches(".gz")
        .trim_end_matches(".nii")
        .trim_end_matches(".png")
        .to_string()
}

/// Loads one slice in HU. Rescale parameters are applied before returning.
pub fn load_ct_slice(path: &Path, format: &SliceFormat) -> Result<CtSlice, DatasetError> {
    match format {
        SliceFormat::Raster16 => load_raster16(path),
        SliceFormat::Nifti { slice } => load_nifti(path, *slice),
    }
}

fn load_raster16(path: &Path) -> Result<CtSlice, DatasetError> {
    let side_path = sidecar_path(path);
    let text = fs::read_to_string(&side_path).map_err(|e| DatasetError::io(&side_path, e))?;
    let sidecar: RasterSidecar = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
        path: side_path.clone(),
        source,
    })?;
    let img = image::open(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let img = match img {
        image::DynamicImage::ImageLuma16(buf) => buf,
        other => {
            return Err(DatasetError::Unsupported {
                path: path.to_path_buf(),
                detail: format!("expected 16-bit single-channel raster, found {:?}", other.color()),
            })
        }
    };
    let (width, height) = img.dimensions();
    if let (Some(w), Some(h)) = (sidecar.width, sidecar.height) {
        if (w, h) != (width, height) {
            return Err(DatasetError::DimensionMismatch {
                path: path.to_path_buf(),
                expected_width: w,
                expected_height: h,
                width,
                height,
            });
        }
    }
    let imaging_err = |source| DatasetError::Imaging {
        path: path.to_path_buf(),
        source,
    };
    let rescale = Rescale::new(sidecar.rescale_slope, sidecar.rescale_intercept).map_err(imaging_err)?;
    let id = SliceId::new(
        sidecar.slice_id.clone().unwrap_or_else(|| file_stem(path)),
        sidecar.patient_id.clone(),
        sidecar.slice_index,
    );
    let slice = CtSlice::from_stored(id, width, height, img.into_raw().into_iter().map(f64::from), rescale)
        .map_err(imaging_err)?;
    Ok(slice.with_pixel_spacing(sidecar.pixel_spacing_mm))
}

fn load_nifti(path: &Path, z: usize) -> Result<CtSlice, DatasetError> {
    let nifti_err = |e: nifti::NiftiError| DatasetError::Nifti {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let obj = ReaderOptions::new().read_file(path).map_err(nifti_err)?;
    let header = obj.header().clone();
    let volume = obj.into_volume();
    let dims: Vec<usize> = volume.dim().iter().map(|&d| d as usize).collect();
    if dims.len() < 2 || dims.len() > 3 && dims[3..].iter().any(|&d| d != 1) {
        return Err(DatasetError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("expected a 2D image or 3D volume, found dims {dims:?}"),
        });
    }
    let depth = dims.get(2).copied().unwrap_or(1);
    if z >= depth {
        return Err(DatasetError::Unsupported {
            path: path.to_path_buf(),
            detail: format!("slice {z} out of range for depth {depth}"),
        });
    }
    let (width, height) = (dims[0], dims[1]);
    let data = volume.into_ndarray::<f32>().map_err(nifti_err)?;
    // Column-major voxel layout: x (column) varies fastest.
    let mut hu = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let mut idx = vec![0usize; data.ndim()];
            idx[0] = x;
            idx[1] = y;
            if data.ndim() > 2 {
                idx[2] = z;
            }
            hu.push(data[idx.as_slice()]);
        }
    }
    let id = SliceId::new(format!("{}_{z}", file_stem(path)), file_stem(path), z as i64);
    let spacing = (f64::from(header.pixdim[1]), f64::from(header.pixdim[2]));
    let slice = CtSlice::new(id, width as u32, height as u32, hu).map_err(|source| DatasetError::Imaging {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(slice.with_pixel_spacing(Some(spacing)))
}

/// Writes `slice` as a 16-bit raster plus sidecar. Stored values are
/// `round((hu - intercept) / slope)` and must fit in `u16`.
pub fn write_raster16(path: &Path, slice: &CtSlice, rescale: Rescale) -> Result<(), DatasetError> {
    let mut stored = Vec::with_capacity(slice.hu().len());
    for &hu in slice.hu() {
        let v = ((f64::from(hu) - rescale.intercept) / rescale.slope).round();
        if !(0.0..=f64::from(u16::MAX)).contains(&v) {
            return Err(DatasetError::Unsupported {
                path: path.to_path_buf(),
                detail: format!(
                    "HU {hu} not representable with slope {} / intercept {}",
                    rescale.slope, rescale.intercept
                ),
            });
        }
        stored.push(v as u16);
    }
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(slice.width(), slice.height(), stored).expect("pixel count checked by CtSlice");
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| DatasetError::io(dir, e))?;
    }
    buf.save(path).map_err(|source| DatasetError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let id = slice.id();
    let sidecar = RasterSidecar {
        slice_id: Some(id.slice_id.clone()),
        patient_id: id.patient_id.clone(),
        slice_index: id.slice_index,
        rescale_slope: rescale.slope,
        rescale_intercept: rescale.intercept,
        width: Some(slice.width()),
        height: Some(slice.height()),
        pixel_spacing_mm: slice.pixel_spacing_mm(),
    };
    let side_path = sidecar_path(path);
    let text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    fs::write(&side_path, text).map_err(|e| DatasetError::io(&side_path, e))
}

/// Writes a single-slice NIfTI-1 volume (float32, unit scaling).
pub fn write_nifti_slice(path: &Path, slice: &CtSlice) -> Result<(), DatasetError> {
    let (w, h) = (slice.width() as usize, slice.height() as usize);
    let arr = Array2::from_shape_fn((w, h), |(x, y)| slice.hu_at(x as u32, y as u32));
    nifti::writer::WriterOptions::new(path)
        .write_nifti(&arr)
        .map_err(|e| DatasetError::Nifti {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}
