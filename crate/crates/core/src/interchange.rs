//! Shared plumbing for exported ONNX graphs: checksum verification,
//! letterbox geometry and input tensor preparation.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{ImageBuffer, Rgb};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tract_onnx::prelude::*;

use crate::imaging::CompositeImage;

pub type Runnable = Arc<TypedRunnableModel>;

#[derive(Debug, Error)]
pub enum InterchangeError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Descriptor {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: checksum mismatch: descriptor says {expected}, file hashes to {actual}")]
    Checksum {
        path: PathBuf,
        expected: String,
        actual: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error("{path}: cannot load graph: {message}")]
    Graph { path: PathBuf, message: String },
}

/// A graph file and the SHA-256 of its bytes (lowercase hex).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphRef {
    /// Relative to the descriptor's directory.
    pub graph: PathBuf,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String, InterchangeError> {
    let bytes = fs::read(path).map_err(|source| InterchangeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl GraphRef {
    /// Resolves the graph against `base` and checks its checksum.
    pub fn verify(&self, base: &Path) -> Result<PathBuf, InterchangeError> {
        let path = base.join(&self.graph);
        let actual = sha256_file(&path)?;
        if !actual.eq_ignore_ascii_case(self.sha256.trim()) {
            return Err(InterchangeError::Checksum {
                path,
                expected: self.sha256.clone(),
                actual,
            });
        }
        Ok(path)
    }
}

pub(crate) fn read_descriptor<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, InterchangeError> {
    let text = fs::read_to_string(path).map_err(|source| InterchangeError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| InterchangeError::Descriptor {
        path: path.to_path_buf(),
        source,
    })
}

/// `(value * scale - mean[c]) / std[c]` per channel, applied to the
/// composite's [0, 1] values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f32,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Self {
            scale: 1.0,
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }
}

/// Fill for the area outside the resized image. `value` is in composite
/// units unless `normalized`, in which case it is written as is.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Padding {
    pub value: f32,
    #[serde(default)]
    pub normalized: bool,
}

/// Where the resized image sits inside the square network input.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Equal padding on both sides (YOLO letterbox).
    #[default]
    Center,
    /// Padding right and bottom only (SAM).
    TopLeft,
}

/// Aspect-preserving resize of a `width × height` frame into a square
/// `size × size` input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub size: u32,
    pub width: u32,
    pub height: u32,
    pub new_width: u32,
    pub new_height: u32,
    pub pad_x: u32,
    pub pad_y: u32,
}

impl Letterbox {
    pub fn new(width: u32, height: u32, size: u32, placement: Placement) -> Self {
        let r = f64::from(size) / f64::from(width.max(height));
        let new_width = ((f64::from(width) * r).round() as u32).clamp(1, size);
        let new_height = ((f64::from(height) * r).round() as u32).clamp(1, size);
        let (pad_x, pad_y) = match placement {
            Placement::Center => ((size - new_width) / 2, (size - new_height) / 2),
            Placement::TopLeft => (0, 0),
        };
        Self {
            size,
            width,
            height,
            new_width,
            new_height,
            pad_x,
            pad_y,
        }
    }

    fn sx(&self) -> f64 {
        f64::from(self.new_width) / f64::from(self.width)
    }

    fn sy(&self) -> f64 {
        f64::from(self.new_height) / f64::from(self.height)
    }

    /// Original continuous coordinates to input coordinates.
    pub fn forward(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.sx() + f64::from(self.pad_x),
            y * self.sy() + f64::from(self.pad_y),
        )
    }

    /// Input coordinates back to original continuous coordinates.
    pub fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - f64::from(self.pad_x)) / self.sx(),
            (y - f64::from(self.pad_y)) / self.sy(),
        )
    }

    /// Input pixel nearest to the centre of original pixel `(x, y)`.
    pub fn nearest_input_pixel(&self, x: u32, y: u32) -> (u32, u32) {
        let (xi, yi) = self.forward(f64::from(x) + 0.5, f64::from(y) + 0.5);
        let last = f64::from(self.size - 1);
        (xi.floor().clamp(0.0, last) as u32, yi.floor().clamp(0.0, last) as u32)
    }

    /// NCHW `[1, 3, size, size]` tensor: bilinear resize, normalization,
    /// `pad` outside the image.
    pub fn tensor(&self, image: &CompositeImage, pad: Padding, norm: &Normalization) -> Tensor {
        let (w, h) = (image.width(), image.height());
        let src: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_fn(w, h, |x, y| Rgb(image.pixel(x, y)));
        let resized = if (self.new_width, self.new_height) == (w, h) {
            src
        } else {
            imageops::resize(&src, self.new_width, self.new_height, FilterType::Triangle)
        };
        let s = self.size as usize;
        let arr = tract_ndarray::Array4::from_shape_fn((1, 3, s, s), |(_, c, y, x)| {
            let (x, y) = (x as u32, y as u32);
            let inside = x >= self.pad_x
                && y >= self.pad_y
                && x < self.pad_x + self.new_width
                && y < self.pad_y + self.new_height;
            let v = if inside {
                resized.get_pixel(x - self.pad_x, y - self.pad_y).0[c]
            } else if pad.normalized {
                return pad.value;
            } else {
                pad.value
            };
            (v * norm.scale - norm.mean[c]) / norm.std[c]
        });
        arr.into_tensor()
    }
}

/// Loads an ONNX graph with the given input facts and optimizes it.
pub(crate) fn load_graph(path: &Path, inputs: &[(DatumType, Vec<usize>)]) -> Result<Runnable, InterchangeError> {
    let err = |e: TractError| InterchangeError::Graph {
        path: path.to_path_buf(),
        message: format!("{e:#}"),
    };
    let mut model = tract_onnx::onnx().model_for_path(path).map_err(err)?;
    for (i, (dt, shape)) in inputs.iter().enumerate() {
        model = model
            .with_input_fact(i, InferenceFact::dt_shape(*dt, shape.as_slice()))
            .map_err(err)?;
    }
    model.into_optimized().map_err(err)?.into_runnable().map_err(err)
}
