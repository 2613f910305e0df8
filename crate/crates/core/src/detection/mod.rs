//! Lesion detection: backend abstraction, thresholding and clamping of raw
//! boxes, and the slice-level decision derived from them.
//!
//! Subtypes ride along as metadata only. A slice counts as detected when any
//! box survives the confidence threshold, whatever its subtype.

mod nms;
#[cfg(feature = "onnx")]
mod onnx;
mod replay;
mod stub;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Subtype;
use crate::imaging::CompositeImage;
use crate::raster::PixelBox;

pub use nms::{box_iou, non_max_suppression, DEFAULT_NMS_IOU};
#[cfg(feature = "onnx")]
pub use onnx::{DetectorDescriptor, OnnxDetector, OutputLayout};
pub use replay::{DetectionFile, ReplayDetector};
pub use stub::StubDetector;

/// Ultralytics' default confidence threshold.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.25;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("confidence threshold must lie in [0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("detector backend `{backend}` failed on slice {slice_id}: {message}")]
    Backend {
        backend: String,
        slice_id: String,
        message: String,
    },
    #[error("detector backend setup: {0}")]
    Setup(String),
}

/// Unvalidated box as emitted by a backend, in original-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub subtype: Subtype,
    pub confidence: f64,
}

/// A detected lesion box, clamped to the image frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
    pub subtype: Subtype,
    pub confidence: f64,
}

impl DetBox {
    /// Smallest integer box covering the detection: `floor` of the start
    /// corner, `ceil` of the end corner, clamped to the frame.
    pub fn pixel_box(&self, width: u32, height: u32) -> Option<PixelBox> {
        let lo = |v: f64, max: u32| (v.floor().max(0.0) as u32).min(max);
        let hi = |v: f64, max: u32| (v.ceil().max(0.0) as u32).min(max);
        PixelBox::new(
            lo(self.x0, width),
            lo(self.y0, height),
            hi(self.x1, width),
            hi(self.y1, height),
        )
    }

    pub fn from_pixel_box(b: &PixelBox, subtype: Subtype, confidence: f64) -> Self {
        Self {
            x0: f64::from(b.x0),
            y0: f64::from(b.y0),
            x1: f64::from(b.x1),
            y1: f64::from(b.y1),
            subtype,
            confidence,
        }
    }
}

/// What a detector accepts and emits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorCapabilities {
    pub name: String,
    /// Network input size `(width, height)`; `None` for backends working at native resolution.
    pub input_size: Option<(u32, u32)>,
    pub classes: Vec<Subtype>,
}

/// A detector instance. One instance serves one request at a time; hold one
/// per worker for parallel runs. Output must be a pure function of the image.
pub trait DetectorBackend: Send {
    fn capabilities(&self) -> &DetectorCapabilities;

    /// Raw boxes in original-image pixel coordinates.
    fn infer(&mut self, image: &CompositeImage) -> Result<Vec<RawDetection>, String>;
}

/// Runs `backend`, keeps boxes with `confidence >= conf_threshold`, clamps
/// them to `[0, width] × [0, height]` and sorts by descending confidence.
///
/// Any non-finite coordinate or confidence fails the whole call.
pub fn detect(
    image: &CompositeImage,
    backend: &mut dyn DetectorBackend,
    conf_threshold: f64,
) -> Result<Vec<DetBox>, DetectionError> {
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(DetectionError::InvalidThreshold(conf_threshold));
    }
    let backend_err = |backend: &dyn DetectorBackend, message: String| DetectionError::Backend {
        backend: backend.capabilities().name.clone(),
        slice_id: image.id().slice_id.clone(),
        message,
    };
    let raw = backend.infer(image).map_err(|m| backend_err(backend, m))?;
    if let Some(bad) = raw
        .iter()
        .find(|r| ![r.x0, r.y0, r.x1, r.y1, r.confidence].iter().all(|v| v.is_finite()))
    {
        return Err(backend_err(backend, format!("non-finite detection {bad:?}")));
    }
    let (w, h) = (f64::from(image.width()), f64::from(image.height()));
    let mut boxes: Vec<DetBox> = raw
        .into_iter()
        .filter_map(|r| {
            let confidence = r.confidence.clamp(0.0, 1.0);
            let b = DetBox {
                x0: r.x0.min(r.x1).clamp(0.0, w),
                y0: r.y0.min(r.y1).clamp(0.0, h),
                x1: r.x1.max(r.x0).clamp(0.0, w),
                y1: r.y1.max(r.y0).clamp(0.0, h),
                subtype: r.subtype,
                confidence,
            };
            (confidence >= conf_threshold && b.x0 < b.x1 && b.y0 < b.y1).then_some(b)
        })
        .collect();
    boxes.sort_by(|a, b| b.confidence.partial_cmp(&a.confidence).unwrap_or(Ordering::Equal));
    Ok(boxes)
}

/// Slice-level outcome: positive iff any box, scored by the best confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceDetection {
    pub positive: bool,
    pub score: f64,
    pub boxes: Vec<DetBox>,
}

pub fn slice_prediction(boxes: &[DetBox]) -> SliceDetection {
    let score = boxes.iter().map(|b| b.confidence).fold(0.0, f64::max);
    SliceDetection {
        positive: !boxes.is_empty(),
        score,
        boxes: boxes.to_vec(),
    }
}
