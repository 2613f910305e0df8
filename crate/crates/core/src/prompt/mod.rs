//! Prompt generation from one detected box: skull stripping, box
//! perturbation, K-means tissue clustering, lesion-cluster selection,
//! skeleton-based positive points and per-cluster negative points.

mod cluster;
mod perturb;
mod sampling;
mod seed;
mod skeleton;
mod skull;

use thiserror::Error;

use crate::raster::PixelBox;

pub use cluster::{
    cluster_roi, kmeans, select_lesion_cluster, ClusterMap, ClusterStats, KMeansResult, CONVERGENCE_TOLERANCE,
    MAX_ITERATIONS,
};
pub use perturb::{perturb_bbox, PerturbSpec};
pub use sampling::{generate_prompts, prompts_for_box, PromptConfig, PromptSet};
pub use seed::{derive_seed, seeded_rng};
pub use skeleton::skeletonize;
pub use skull::{erode3x3, fill_holes, strip_skull, SkullStripped, StripMethod, BONE_HU, STRIPPED_HU};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum PromptError {
    #[error("invalid prompt configuration: {0}")]
    InvalidSpec(String),
    #[error("box {bbox:?} exceeds the {width}x{height} frame")]
    BoxOutOfBounds { bbox: PixelBox, width: u32, height: u32 },
    #[error("mask is {actual:?}, expected {expected:?}")]
    MaskDimensionMismatch { expected: (u32, u32), actual: (u32, u32) },
    #[error("only {usable} usable pixels in the box for {k} clusters")]
    TooFewPixels { usable: usize, k: usize },
    #[error("degenerate clustering: {nonempty} nonempty cluster(s)")]
    DegenerateClustering { nonempty: usize },
    #[error("lesion cluster {0} is empty")]
    EmptyLesion(usize),
}
