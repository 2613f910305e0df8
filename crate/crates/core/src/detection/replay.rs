use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DetectionError, DetectorBackend, DetectorCapabilities, RawDetection};
use crate::dataset::Subtype;
use crate::imaging::CompositeImage;

/// Precomputed detections keyed by slice id. Also the output format of the
/// `detect` command, so a detection run can be replayed into segmentation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub slices: BTreeMap<String, Vec<RawDetection>>,
}

impl DetectionFile {
    pub fn load(path: &Path) -> Result<Self, DetectionError> {
        let text = fs::read_to_string(path).map_err(|e| DetectionError::Setup(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| DetectionError::Setup(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("detections serialize")
    }
}

/// Emits the recorded boxes for each slice; slices absent from the file get none.
#[derive(Debug, Clone)]
pub struct ReplayDetector {
    caps: DetectorCapabilities,
    file: DetectionFile,
}

impl ReplayDetector {
    pub fn new(file: DetectionFile) -> Self {
        Self {
            caps: DetectorCapabilities {
                name: "replay".into(),
                input_size: None,
                classes: Subtype::ALL.to_vec(),
            },
            file,
        }
    }

    pub fn load(path: &Path) -> Result<Self, DetectionError> {
        DetectionFile::load(path).map(Self::new)
    }
}

impl DetectorBackend for ReplayDetector {
    fn capabilities(&self) -> &DetectorCapabilities {
        &self.caps
    }

    fn infer(&mut self, image: &CompositeImage) -> Result<Vec<RawDetection>, String> {
        Ok(self.file.slices.get(&image.id().slice_id).cloned().unwrap_or_default())
    }
}
