//! Dataset ingestion: CT slices (16-bit raster + JSON sidecar, or NIfTI-1),
//! lesion masks, box annotations and the patient-grouped slice index.

mod annotations;
mod index;
mod mask_io;
mod slice_io;

use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::ImagingError;

pub use annotations::{
    convert_bhx, load_annotations, parse_annotations, write_annotations, Annotations, GroundTruthBox, RowRejection,
    Subtype,
};
pub use index::{build_index, DatasetIndex, Manifest, ManifestEntry, SliceRecord};
pub use mask_io::{load_mask, mask_from_image, write_mask};
pub use slice_io::{load_ct_slice, write_nifti_slice, write_raster16, RasterSidecar, SliceFormat};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: NIfTI: {message}")]
    Nifti { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: expected {expected_width}x{expected_height}, found {width}x{height}")]
    DimensionMismatch {
        path: PathBuf,
        expected_width: u32,
        expected_height: u32,
        width: u32,
        height: u32,
    },
    #[error("{path}: {source}")]
    Imaging {
        path: PathBuf,
        #[source]
        source: ImagingError,
    },
    #[error("{path}: {detail}")]
    Unsupported { path: PathBuf, detail: String },
    #[error("{path}: missing CSV column `{column}`")]
    MissingColumn { path: PathBuf, column: String },
    #[error("duplicate slice id(s): {}", .0.join(", "))]
    DuplicateSliceIds(Vec<String>),
    #[error("dangling path(s): {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    DanglingPaths(Vec<PathBuf>),
    #[error("annotations reference unknown slice id(s): {}", .0.join(", "))]
    UnknownAnnotatedSlices(Vec<String>),
}

impl DatasetError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.into(),
            source,
        }
    }
}
