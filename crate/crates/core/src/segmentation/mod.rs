//! Promptable segmentation with uncertainty rectification: one segmenter call
//! per perturbed prompt, combined by pixel-wise majority vote.

mod ensemble;
#[cfg(feature = "onnx")]
mod onnx;
mod stubs;
mod vote;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imaging::CompositeImage;
use crate::prompt::{PromptError, PromptSet};
use crate::raster::BinaryMask;

pub use ensemble::{
    run_variant, segment_slice, BoxReport, EnsembleConfig, MemberDegradation, SliceContext, SliceReport,
    SliceSegmentation, VariantRun,
};
#[cfg(feature = "onnx")]
pub use onnx::{OnnxSegmenter, SegmenterDescriptor};
pub use stubs::{
    FillBoxSegmenter, MaskOracleSegmenter, MaskReplayFile, RecordingSegmenter, ReplaySegmenter, ThresholdSegmenter,
};
pub use vote::{majority_vote, VoteMap, VoteRule, VoteStats};

/// Which prompt fields an ensemble member forwards to the segmenter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VariantKind {
    #[serde(rename = "bbox", alias = "BBox")]
    BBox,
    #[serde(rename = "point", alias = "Point")]
    Point,
    #[serde(rename = "point_bbox", alias = "PointBBox")]
    PointBBox,
}

impl VariantKind {
    pub const ALL: [VariantKind; 3] = [VariantKind::BBox, VariantKind::Point, VariantKind::PointBBox];

    pub fn uses_box(self) -> bool {
        matches!(self, VariantKind::BBox | VariantKind::PointBBox)
    }

    pub fn uses_points(self) -> bool {
        matches!(self, VariantKind::Point | VariantKind::PointBBox)
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VariantKind::BBox => "BBox",
            VariantKind::Point => "Point",
            VariantKind::PointBBox => "PointBBox",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterCapabilities {
    pub name: String,
    pub accepts_boxes: bool,
    pub accepts_points: bool,
}

impl SegmenterCapabilities {
    pub fn supports(&self, variant: VariantKind) -> bool {
        (!variant.uses_box() || self.accepts_boxes) && (!variant.uses_points() || self.accepts_points)
    }
}

/// A promptable segmenter. Deterministic for fixed image, prompt and weights;
/// one instance serves one request at a time.
pub trait SegmenterBackend: Send {
    fn capabilities(&self) -> &SegmenterCapabilities;

    /// Mask at the image's resolution. Fields of `prompt` that the current
    /// variant does not use are already cleared.
    fn segment(&mut self, image: &CompositeImage, prompt: &PromptSet) -> Result<BinaryMask, String>;
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SegmentationError {
    #[error("member {member}: segmenter `{backend}` does not support the {variant} variant")]
    Capability {
        backend: String,
        variant: VariantKind,
        member: usize,
    },
    #[error("member {member}: {variant} variant needs {field} but the prompt has none")]
    MissingPrompt {
        variant: VariantKind,
        member: usize,
        field: &'static str,
    },
    #[error("member {member}: segmenter `{backend}` failed: {message}")]
    Backend {
        backend: String,
        member: usize,
        message: String,
    },
    #[error("member {member}: mask is {actual:?}, image is {expected:?}")]
    MaskDimensions {
        member: usize,
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("vote: {0}")]
    Vote(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("slice {slice_id}: every box failed: {}", .errors.join("; "))]
    AllBoxesFailed { slice_id: String, errors: Vec<String> },
}

impl SegmentationError {
    fn at_member(self, index: usize) -> Self {
        match self {
            SegmentationError::Capability { backend, variant, .. } => SegmentationError::Capability {
                backend,
                variant,
                member: index,
            },
            SegmentationError::MissingPrompt { variant, field, .. } => SegmentationError::MissingPrompt {
                variant,
                member: index,
                field,
            },
            SegmentationError::Backend { backend, message, .. } => SegmentationError::Backend {
                backend,
                member: index,
                message,
            },
            SegmentationError::MaskDimensions { expected, actual, .. } => SegmentationError::MaskDimensions {
                member: index,
                expected,
                actual,
            },
            other => other,
        }
    }
}

/// Runs one segmenter call, forwarding only the prompt fields `variant` uses.
pub fn segment_one(
    image: &CompositeImage,
    prompt: &PromptSet,
    variant: VariantKind,
    backend: &mut dyn SegmenterBackend,
) -> Result<BinaryMask, SegmentationError> {
    let caps = backend.capabilities();
    if !caps.supports(variant) {
        return Err(SegmentationError::Capability {
            backend: caps.name.clone(),
            variant,
            member: 0,
        });
    }
    let forwarded = PromptSet {
        bbox: if variant.uses_box() { prompt.bbox } else { None },
        positive_points: if variant.uses_points() {
            prompt.positive_points.clone()
        } else {
            Vec::new()
        },
        negative_points: if variant.uses_points() {
            prompt.negative_points.clone()
        } else {
            Vec::new()
        },
    };
    if variant.uses_box() && forwarded.bbox.is_none() {
        return Err(SegmentationError::MissingPrompt {
            variant,
            member: 0,
            field: "a box",
        });
    }
    if variant.uses_points() && forwarded.positive_points.is_empty() {
        return Err(SegmentationError::MissingPrompt {
            variant,
            member: 0,
            field: "positive points",
        });
    }
    let name = caps.name.clone();
    let mask = backend
        .segment(image, &forwarded)
        .map_err(|message| SegmentationError::Backend {
            backend: name,
            member: 0,
            message,
        })?;
    let expected = (image.width(), image.height());
    if mask.dims() != expected {
        return Err(SegmentationError::MaskDimensions {
            member: 0,
            expected,
            actual: mask.dims(),
        });
    }
    Ok(mask)
}
