//! Slice-wise detection metrics, ROC AUC, Dice/IoU, mean ± standard error,
//! paired t-tests and patient-wise recall.

mod report;
mod stats;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::BinaryMask;

pub use report::{
    evaluate_run, ground_truth_from_index, BaselineScores, Comparison, Coverage, DetectionRule, DetectionSection,
    EvalConfig, EvaluationReport, GroundTruth, SegmentationSection, SlicePrediction, SliceScore,
};
pub use stats::{
    ln_gamma, paired_ttest, regularized_incomplete_beta, student_t_two_tailed, ttest_on_differences, TTest,
    TTestDegeneracy,
};

/// Minimum mask size for a segmentation to count as a detection: strictly
/// more than this many pixels.
pub const DEFAULT_SEG_MIN_PIXELS: usize = 10;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum MetricsError {
    #[error("ROC AUC needs both classes; got {positives} positive and {negatives} negative")]
    SingleClass { positives: usize, negatives: usize },
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("mask dimensions differ: {0:?} vs {1:?}")]
    DimensionMismatch((u32, u32), (u32, u32)),
    #[error("need at least {needed} values, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("paired samples differ in length: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no patient has a positive slice")]
    NoPositivePatients,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// Tallies `(predicted, actual)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (bool, bool)>) -> Self {
        let mut c = Self::default();
        for (pred, truth) in pairs {
            match (pred, truth) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A ratio that reads 0 when its denominator is 0, with `undefined` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ratio {
    pub value: f64,
    pub undefined: bool,
}

impl Ratio {
    pub fn of(num: usize, den: usize) -> Self {
        if den == 0 {
            Ratio {
                value: 0.0,
                undefined: true,
            }
        } else {
            Ratio {
                value: num as f64 / den as f64,
                undefined: false,
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub accuracy: Ratio,
    pub precision: Ratio,
    pub recall: Ratio,
    pub f1: Ratio,
    pub specificity: Ratio,
}

pub fn detection_metrics(c: &ConfusionCounts) -> DetectionMetrics {
    DetectionMetrics {
        accuracy: Ratio::of(c.tp + c.tn, c.total()),
        precision: Ratio::of(c.tp, c.tp + c.fp),
        recall: Ratio::of(c.tp, c.tp + c.fn_),
        f1: Ratio::of(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        specificity: Ratio::of(c.tn, c.tn + c.fp),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredLabel {
    pub slice_id: String,
    pub score: f64,
    pub label: bool,
}

/// Area under the ROC curve as the Mann-Whitney statistic, with tied scores
/// given their average rank.
pub fn roc_auc(samples: &[ScoredLabel]) -> Result<f64, MetricsError> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(MetricsError::NonFinite(s.score));
    }
    let positives = samples.iter().filter(|s| s.label).count();
    let negatives = samples.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(MetricsError::SingleClass { positives, negatives });
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| {
        samples[a]
            .score
            .partial_cmp(&samples[b].score)
            .unwrap_or(Ordering::Equal)
    });
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean.
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * order[i..=j].iter().filter(|&&k| samples[k].label).count() as f64;
        i = j + 1;
    }
    let (p, n) = (positives as f64, negatives as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// True when `mask` has strictly more than `min_pixels` pixels.
pub fn seg_detection_rule(mask: &BinaryMask, min_pixels: usize) -> bool {
    mask.count() > min_pixels
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub dice: f64,
    pub iou: f64,
    /// Both masks empty; scored 1.0 and left out of lesion averages.
    pub both_empty: bool,
}

pub fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<Overlap, MetricsError> {
    if !a.same_dims(b) {
        return Err(MetricsError::DimensionMismatch(a.dims(), b.dims()));
    }
    let inter = a.intersection_count(b) as f64;
    let (na, nb) = (a.count() as f64, b.count() as f64);
    if na + nb == 0.0 {
        return Ok(Overlap {
            dice: 1.0,
            iou: 1.0,
            both_empty: true,
        });
    }
    Ok(Overlap {
        dice: 2.0 * inter / (na + nb),
        iou: inter / (na + nb - inter),
        both_empty: false,
    })
}

pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    overlap(a, b).map(|o| o.dice)
}

pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MetricsError> {
    overlap(a, b).map(|o| o.iou)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStderr {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over √n; absent for a single value.
    pub stderr: Option<f64>,
}

pub fn mean_stderr(values: &[f64]) -> Result<MeanStderr, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::TooFewSamples { needed: 1, got: 0 });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = (values.len() >= 2).then(|| {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    });
    Ok(MeanStderr {
        n: values.len(),
        mean,
        stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientRecall {
    pub detected: usize,
    pub positive: usize,
    pub recall: f64,
}

/// Recall over patients: a positive patient (one with any ICH slice) counts
/// as detected when at least one of its ICH slices is predicted positive.
///
/// `slices` yields `(patient_id, actual, predicted)`.
pub fn patient_recall<'a>(
    slices: impl IntoIterator<Item = (&'a str, bool, bool)>,
) -> Result<PatientRecall, MetricsError> {
    let mut patients: std::collections::BTreeMap<&str, bool> = std::collections::BTreeMap::new();
    for (patient, truth, pred) in slices {
        if truth {
            *patients.entry(patient).or_default() |= pred;
        }
    }
    if patients.is_empty() {
        return Err(MetricsError::NoPositivePatients);
    }
    let detected = patients.values().filter(|&&d| d).count();
    Ok(PatientRecall {
        detected,
        positive: patients.len(),
        recall: detected as f64 / patients.len() as f64,
    })
}
