use serde::{Deserialize, Serialize};

use super::vote::{VoteMap, VoteRule, VoteStats};
use super::{segment_one, SegmentationError, SegmenterBackend, VariantKind};
use crate::detection::DetBox;
use crate::imaging::CompositeImage;
use crate::prompt::{derive_seed, perturb_bbox, prompts_for_box, PerturbSpec, PromptConfig, PromptSet, SkullStripped};
use crate::raster::{BinaryMask, PixelBox};

/// Everything the ensemble needs from one slice, computed once.
#[derive(Debug, Clone, Copy)]
pub struct SliceContext<'a> {
    pub composite: &'a CompositeImage,
    pub stripped: &'a SkullStripped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// `seed` inside is ignored; member seeds come from the run seed.
    pub perturbation: PerturbSpec,
    pub prompts: PromptConfig,
    pub vote: VoteRule,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            perturbation: PerturbSpec::default(),
            prompts: PromptConfig::default(),
            vote: VoteRule::StrictMajority,
        }
    }
}

/// A member whose point prompts could not be built and that fell back to
/// prompting with its box alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberDegradation {
    pub member: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub boxes: Vec<PixelBox>,
    pub prompts: Vec<PromptSet>,
    pub masks: Vec<BinaryMask>,
    pub degraded: Vec<MemberDegradation>,
}

/// One segmenter call per perturbed copy of `bbox`.
///
/// Member `m` perturbs with `derive_seed(seed, slice, box_index, 0)` and
/// draws its prompts with `derive_seed(seed, slice, box_index, m + 1)`.
/// The first backend or capability failure aborts the box.
#[allow(clippy::too_many_arguments)]
pub fn run_variant(
    ctx: SliceContext<'_>,
    bbox: &PixelBox,
    box_index: usize,
    variant: VariantKind,
    backend: &mut dyn SegmenterBackend,
    config: &EnsembleConfig,
    seed: u64,
) -> Result<VariantRun, SegmentationError> {
    config.prompts.validate()?;
    let image = ctx.composite;
    let slice_id = image.id().slice_id.as_str();
    let spec = config.perturbation.with_seed(derive_seed(seed, slice_id, box_index, 0));
    let boxes = perturb_bbox(bbox, &spec, image.width(), image.height())?;

    let mut run = VariantRun {
        prompts: Vec::with_capacity(boxes.len()),
        masks: Vec::with_capacity(boxes.len()),
        degraded: Vec::new(),
        boxes,
    };
    for (m, pb) in run.boxes.iter().enumerate() {
        let mut member_variant = variant;
        let prompt = if variant.uses_points() {
            let member_seed = derive_seed(seed, slice_id, box_index, m + 1);
            match prompts_for_box(image, ctx.stripped, pb, &config.prompts, member_seed) {
                Ok(p) => p,
                Err(e) => {
                    log::debug!("{slice_id} box {box_index} member {m}: box-only fallback: {e}");
                    run.degraded.push(MemberDegradation {
                        member: m,
                        reason: e.to_string(),
                    });
                    member_variant = VariantKind::BBox;
                    PromptSet::box_only(*pb)
                }
            }
        } else {
            PromptSet::box_only(*pb)
        };
        let mask = segment_one(image, &prompt, member_variant, backend).map_err(|e| e.at_member(m))?;
        run.prompts.push(prompt);
        run.masks.push(mask);
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxReport {
    pub box_index: usize,
    pub detection: DetBox,
    pub pixel_box: Option<PixelBox>,
    pub members: usize,
    /// Prompt built for member 0, for inspection and overlays.
    pub prompt: Option<PromptSet>,
    pub degraded: Vec<MemberDegradation>,
    pub votes: Option<VoteStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub slice_id: String,
    pub variant: VariantKind,
    pub boxes: Vec<BoxReport>,
    pub mask_pixels: usize,
}

impl SliceReport {
    pub fn failed_boxes(&self) -> usize {
        self.boxes.iter().filter(|b| b.error.is_some()).count()
    }

    pub fn degraded_members(&self) -> usize {
        self.boxes.iter().map(|b| b.degraded.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceSegmentation {
    pub mask: BinaryMask,
    pub report: SliceReport,
}

/// Votes each box's ensemble and takes the union over boxes.
///
/// A failing box is recorded in the report and contributes nothing; if every
/// box fails the slice fails. No boxes gives an empty mask.
pub fn segment_slice(
    ctx: SliceContext<'_>,
    detections: &[DetBox],
    variant: VariantKind,
    backend: &mut dyn SegmenterBackend,
    config: &EnsembleConfig,
    seed: u64,
) -> Result<SliceSegmentation, SegmentationError> {
    let image = ctx.composite;
    let (w, h) = (image.width(), image.height());
    let mut mask = BinaryMask::new(w, h);
    let mut reports = Vec::with_capacity(detections.len());
    let mut errors = Vec::new();
    for (i, det) in detections.iter().enumerate() {
        let mut report = BoxReport {
            box_index: i,
            detection: *det,
            pixel_box: det.pixel_box(w, h),
            members: 0,
            prompt: None,
            degraded: Vec::new(),
            votes: None,
            error: None,
        };
        let outcome = match report.pixel_box {
            None => Err(format!("box {i} is empty after rasterisation")),
            Some(pb) => run_variant(ctx, &pb, i, variant, backend, config, seed).map_err(|e| format!("box {i}: {e}")),
        };
        match outcome {
            Ok(run) => {
                let mut votes = VoteMap::new(w, h);
                for m in &run.masks {
                    votes.add(m)?;
                }
                mask.union_with(&votes.finalize(config.vote));
                report.members = run.masks.len();
                report.prompt = run.prompts.first().cloned();
                report.degraded = run.degraded;
                report.votes = Some(votes.stats(config.vote));
            }
            Err(e) => {
                log::warn!("{}: {e}", image.id().slice_id);
                errors.push(e.clone());
                report.error = Some(e);
            }
        }
        reports.push(report);
    }
    if !detections.is_empty() && errors.len() == detections.len() {
        return Err(SegmentationError::AllBoxesFailed {
            slice_id: image.id().slice_id.clone(),
            errors,
        });
    }
    Ok(SliceSegmentation {
        report: SliceReport {
            slice_id: image.id().slice_id.clone(),
            variant,
            boxes: reports,
            mask_pixels: mask.count(),
        },
        mask,
    })
}
