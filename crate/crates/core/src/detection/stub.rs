use std::collections::HashMap;

use super::{DetectorBackend, DetectorCapabilities, RawDetection};
use crate::dataset::{DatasetIndex, GroundTruthBox, Subtype};
use crate::imaging::CompositeImage;
use crate::prompt::{derive_seed, perturb_bbox, PerturbSpec};

/// Emits each slice's ground-truth boxes with confidence 1.0.
///
/// With `noise`, every box is grown once through [`perturb_bbox`] using a
/// seed derived from `(seed, slice_id, box_index)`.
#[derive(Debug, Clone)]
pub struct StubDetector {
    caps: DetectorCapabilities,
    boxes: HashMap<String, Vec<GroundTruthBox>>,
    noise: Option<PerturbSpec>,
    seed: u64,
}

impl StubDetector {
    pub fn new(index: &DatasetIndex, noise: Option<PerturbSpec>, seed: u64) -> Self {
        let boxes = index
            .records()
            .iter()
            .map(|r| (r.slice_id.clone(), r.boxes.clone()))
            .collect();
        Self {
            caps: DetectorCapabilities {
                name: "stub".into(),
                input_size: None,
                classes: Subtype::ALL.to_vec(),
            },
            boxes,
            noise: noise.map(|n| PerturbSpec { count: 1, ..n }),
            seed,
        }
    }
}

impl DetectorBackend for StubDetector {
    fn capabilities(&self) -> &DetectorCapabilities {
        &self.caps
    }

    fn infer(&mut self, image: &CompositeImage) -> Result<Vec<RawDetection>, String> {
        let id = &image.id().slice_id;
        let Some(gt) = self.boxes.get(id) else {
            return Ok(Vec::new());
        };
        gt.iter()
            .enumerate()
            .map(|(i, b)| {
                let bbox = match &self.noise {
                    Some(spec) => {
                        let spec = spec.with_seed(derive_seed(self.seed, id, i, 0));
                        perturb_bbox(&b.bbox, &spec, image.width(), image.height()).map_err(|e| e.to_string())?[0]
                    }
                    None => b.bbox,
                };
                Ok(RawDetection {
                    x0: f64::from(bbox.x0),
                    y0: f64::from(bbox.y0),
                    x1: f64::from(bbox.x1),
                    y1: f64::from(bbox.y1),
                    subtype: b.subtype,
                    confidence: 1.0,
                })
            })
            .collect()
    }
}
