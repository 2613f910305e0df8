use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seed::seeded_rng;
use super::PromptError;
use crate::raster::PixelBox;

/// Box perturbation: `count` copies, each side pushed outwards by an integer
/// drawn uniformly from `[min_expand_px, max_expand_px]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbSpec {
    pub count: usize,
    pub min_expand_px: u32,
    pub max_expand_px: u32,
    #[serde(default)]
    pub seed: u64,
}

impl Default for PerturbSpec {
    fn default() -> Self {
        Self {
            count: 10,
            min_expand_px: 1,
            max_expand_px: 4,
            seed: 0,
        }
    }
}

impl PerturbSpec {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.count == 0 {
            return Err(PromptError::InvalidSpec("perturbation count must be >= 1".into()));
        }
        if self.min_expand_px < 1 || self.min_expand_px > self.max_expand_px {
            return Err(PromptError::InvalidSpec(format!(
                "perturbation expansion must satisfy 1 <= min ({}) <= max ({})",
                self.min_expand_px, self.max_expand_px
            )));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// `spec.count` expanded copies of `bbox`, clamped to the `width × height` frame.
///
/// Draw order per copy is left, top, right, bottom from one generator seeded
/// with `spec.seed`, so the list is reproducible.
pub fn perturb_bbox(
    bbox: &PixelBox,
    spec: &PerturbSpec,
    width: u32,
    height: u32,
) -> Result<Vec<PixelBox>, PromptError> {
    spec.validate()?;
    if !bbox.fits_within(width, height) {
        return Err(PromptError::BoxOutOfBounds {
            bbox: *bbox,
            width,
            height,
        });
    }
    let mut rng = seeded_rng(spec.seed);
    let range = spec.min_expand_px..=spec.max_expand_px;
    Ok((0..spec.count)
        .map(|_| {
            let left = rng.random_range(range.clone());
            let top = rng.random_range(range.clone());
            let right = rng.random_range(range.clone());
            let bottom = rng.random_range(range.clone());
            PixelBox {
                x0: bbox.x0.saturating_sub(left),
                y0: bbox.y0.saturating_sub(top),
                x1: bbox.x1.saturating_add(right).min(width),
                y1: bbox.y1.saturating_add(bottom).min(height),
            }
        })
        .collect())
}
