//! Weakly supervised intracranial hemorrhage (ICH) segmentation.
//!
//! The pipeline turns a CT slice into a three-window composite image, takes
//! lesion boxes from a detector, derives point prompts from K-means tissue
//! clusters inside each (perturbed) box, runs a promptable segmenter once per
//! perturbed prompt and keeps the pixels a strict majority of members agree on.
//!
//! Stages:
//!
//! 1. [`imaging`] – HU windowing and the brain/subdural/bone composite.
//! 2. [`dataset`] – slice, mask and annotation loading; the patient index.
//! 3. [`detection`] – detector backends and slice-level decisions.
//! 4. [`prompt`] – skull stripping, box perturbation, clustering, skeletons, point sampling.
//! 5. [`segmentation`] – segmenter backends, ensemble members and majority voting.
//! 6. [`metrics`] – detection/segmentation metrics, ROC AUC, paired t-tests, reports.
//! 7. [`pipeline`] – config-driven preprocess/run/evaluate/overlay commands.

pub mod dataset;
pub mod detection;
pub mod imaging;
#[cfg(feature = "onnx")]
pub mod interchange;
pub mod metrics;
#[cfg(feature = "onnx")]
pub mod onnx_fixtures;
pub mod pipeline;
pub mod prompt;
pub mod raster;
pub mod segmentation;
pub mod synthetic;

pub use imaging::{CompositeImage, CtSlice, SliceId, WindowName, WindowSet, WindowSpec};
pub use raster::{BinaryMask, PixelBox, Point};
