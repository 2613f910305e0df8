//! Config-driven commands: preprocess, detect, segment, run, evaluate,
//! overlay and index export.
//!
//! Every command validates the whole config before touching the output
//! directory. Slices are processed on a worker pool, each worker holding its
//! own backend instances; results are gathered in index order and written by
//! one thread, so identical inputs give byte-identical outputs.

mod commands;
mod config;
mod overlay;

use thiserror::Error;

pub use commands::{
    convert_bhx_file, detect, evaluate, export_index, overlay, preprocess, run, segment, CompositeEntry,
    CompositeManifest, RunParameters, RunReport, RunSummary, SliceRun, COMPOSITES_DIR, DETECTIONS_FILE,
    EVALUATION_FILE, EVALUATION_TABLE_FILE, INDEX_FILE, MASKS_DIR, OVERLAYS_DIR, RUN_REPORT_FILE, SCORES_FILE,
};
pub use config::{
    BaselineSpec, ConfigIssue, DetectorConfig, DetectorSource, EvaluationConfig, Overrides, PipelineConfig,
    SegmenterSource, ValidConfig, OUTPUT_DIR_ENV,
};
pub use overlay::{render_overlay, OverlayLayers, Palette};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<config::ConfigIssue>),
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        PipelineError::Runtime(e.to_string())
    }

    /// 1 for configuration problems, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Runtime(_) => 2,
        }
    }
}
