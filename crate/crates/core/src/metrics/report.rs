use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    detection_metrics, mean_stderr, overlap, patient_recall, roc_auc, seg_detection_rule, ttest_on_differences,
    ConfusionCounts, DetectionMetrics, MeanStderr, PatientRecall, Ratio, ScoredLabel, TTest, DEFAULT_SEG_MIN_PIXELS,
};
use crate::dataset::{DatasetError, DatasetIndex};
use crate::raster::BinaryMask;

/// How a slice is called positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectionRule {
    /// The detector's decision: any box at or above the confidence threshold.
    #[default]
    Detector,
    /// The predicted mask has more than `min_pixels` pixels.
    Segmentation { min_pixels: usize },
}

impl DetectionRule {
    pub fn segmentation() -> Self {
        DetectionRule::Segmentation {
            min_pixels: DEFAULT_SEG_MIN_PIXELS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Label for this run in tables.
    pub method: String,
    pub rule: DetectionRule,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            method: "ours".into(),
            rule: DetectionRule::Detector,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub slice_id: String,
    pub patient_id: String,
    pub positive: bool,
    pub mask: Option<BinaryMask>,
}

/// Loads labels and lesion masks for every slice in `index`.
pub fn ground_truth_from_index(index: &DatasetIndex) -> Result<Vec<GroundTruth>, DatasetError> {
    index
        .records()
        .iter()
        .map(|r| {
            let mask = index.load_mask(r)?;
            Ok(GroundTruth {
                slice_id: r.slice_id.clone(),
                patient_id: r.patient_id.clone(),
                positive: r.is_positive(mask.as_ref()),
                mask,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePrediction {
    pub slice_id: String,
    /// Detector decision at the operating threshold.
    pub detected: bool,
    /// Maximum box confidence; 0 without boxes.
    pub score: f64,
    pub mask: Option<BinaryMask>,
}

/// Per-slice values from another method, keyed by slice id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScores {
    pub name: String,
    pub metric: String,
    pub scores: BTreeMap<String, f64>,
}

impl BaselineScores {
    /// Reads a per-slice score CSV (the format [`EvaluationReport::scores_csv`]
    /// writes): a `slice_id` column plus a `metric` column; blank cells are
    /// skipped. The baseline is named after the file stem.
    pub fn load_csv(path: &Path, metric: &str) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| DatasetError::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
        let headers = rdr
            .headers()
            .map_err(|e| DatasetError::Csv {
                path: path.to_path_buf(),
                source: e,
            })?
            .clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| DatasetError::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.into(),
                })
        };
        let (id_col, value_col) = (col("slice_id")?, col(metric)?);
        let mut scores = BTreeMap::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| DatasetError::Csv {
                path: path.to_path_buf(),
                source: e,
            })?;
            let cell = row.get(value_col).unwrap_or("").trim();
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| DatasetError::Unsupported {
                path: path.to_path_buf(),
                detail: format!("line {}: `{cell}` is not a number", line + 2),
            })?;
            scores.insert(row.get(id_col).unwrap_or("").trim().to_string(), v);
        }
        Ok(Self {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            metric: metric.into(),
            scores,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceScore {
    pub slice_id: String,
    pub patient_id: String,
    pub label: bool,
    pub predicted: bool,
    pub score: f64,
    pub predicted_pixels: usize,
    /// Only on mask-annotated ICH slices.
    pub dice: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Indexed slices with no prediction.
    pub missing_predictions: Vec<String>,
    /// Predictions for slices not in the index.
    pub unknown_predictions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionSection {
    pub rule: DetectionRule,
    pub counts: ConfusionCounts,
    pub metrics: DetectionMetrics,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationSection {
    pub dice: MeanStderr,
    pub iou: MeanStderr,
    /// Mask-annotated positive slices whose mask and prediction were both empty.
    pub both_empty_excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub metric: String,
    pub n: usize,
    /// Slices scored here but absent from the baseline file.
    pub unmatched: usize,
    pub mean: f64,
    pub baseline_mean: f64,
    /// This run minus the baseline.
    pub ttest: Option<TTest>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub slices_evaluated: usize,
    pub coverage: Coverage,
    pub warnings: Vec<String>,
    pub detection: Option<DetectionSection>,
    pub segmentation: Option<SegmentationSection>,
    pub patient_recall: Option<PatientRecall>,
    pub comparisons: Vec<Comparison>,
    pub slices: Vec<SliceScore>,
}

/// Scores `predictions` against `truth` slice by slice.
///
/// Only slices present in both are evaluated; gaps are listed in
/// `coverage` with a warning. Dice and IoU are averaged over mask-annotated
/// ICH slices, where a missing or empty prediction scores 0.
pub fn evaluate_run(
    truth: &[GroundTruth],
    predictions: &[SlicePrediction],
    config: &EvalConfig,
    baselines: &[BaselineScores],
) -> EvaluationReport {
    let preds: BTreeMap<&str, &SlicePrediction> = predictions.iter().map(|p| (p.slice_id.as_str(), p)).collect();
    let known: BTreeSet<&str> = truth.iter().map(|t| t.slice_id.as_str()).collect();
    let mut warnings = Vec::new();
    let coverage = Coverage {
        missing_predictions: truth
            .iter()
            .filter(|t| !preds.contains_key(t.slice_id.as_str()))
            .map(|t| t.slice_id.clone())
            .collect(),
        unknown_predictions: preds
            .keys()
            .filter(|k| !known.contains(*k))
            .map(|k| k.to_string())
            .collect(),
    };
    if !coverage.missing_predictions.is_empty() {
        warnings.push(format!(
            "{} of {} indexed slices have no prediction; evaluating the rest",
            coverage.missing_predictions.len(),
            truth.len()
        ));
    }
    if !coverage.unknown_predictions.is_empty() {
        warnings.push(format!(
            "{} predictions are for slices not in the index",
            coverage.unknown_predictions.len()
        ));
    }

    let pairs: Vec<(&GroundTruth, &SlicePrediction)> = truth
        .iter()
        .filter_map(|t| preds.get(t.slice_id.as_str()).map(|p| (t, *p)))
        .collect();
    let scored: Vec<Result<(SliceScore, bool), String>> =
        pairs.par_iter().map(|(t, p)| score_slice(t, p, config.rule)).collect();
    let mut slices = Vec::with_capacity(scored.len());
    let mut both_empty = 0;
    for s in scored {
        match s {
            Ok((score, empty)) => {
                both_empty += usize::from(empty);
                slices.push(score);
            }
            Err(w) => warnings.push(w),
        }
    }

    let mut report = EvaluationReport {
        method: config.method.clone(),
        slices_evaluated: slices.len(),
        coverage,
        warnings,
        detection: None,
        segmentation: None,
        patient_recall: None,
        comparisons: Vec::new(),
        slices: Vec::new(),
    };
    if slices.is_empty() {
        report.warnings.push("no slice could be evaluated".into());
        return report;
    }

    let counts = ConfusionCounts::from_pairs(slices.iter().map(|s| (s.predicted, s.label)));
    let labels: Vec<ScoredLabel> = slices
        .iter()
        .map(|s| ScoredLabel {
            slice_id: s.slice_id.clone(),
            score: s.score,
            label: s.label,
        })
        .collect();
    let auc = match roc_auc(&labels) {
        Ok(a) => Some(a),
        Err(e) => {
            report.warnings.push(format!("AUC: {e}"));
            None
        }
    };
    report.detection = Some(DetectionSection {
        rule: config.rule,
        counts,
        metrics: detection_metrics(&counts),
        auc,
    });
    match patient_recall(slices.iter().map(|s| (s.patient_id.as_str(), s.label, s.predicted))) {
        Ok(r) => report.patient_recall = Some(r),
        Err(e) => report.warnings.push(format!("patient recall: {e}")),
    }

    let dice: Vec<f64> = slices.iter().filter_map(|s| s.dice).collect();
    let iou: Vec<f64> = slices.iter().filter_map(|s| s.iou).collect();
    match (mean_stderr(&dice), mean_stderr(&iou)) {
        (Ok(d), Ok(i)) => {
            report.segmentation = Some(SegmentationSection {
                dice: d,
                iou: i,
                both_empty_excluded: both_empty,
            })
        }
        _ => report
            .warnings
            .push("no mask-annotated ICH slice to score segmentation on".into()),
    }

    for b in baselines {
        report.comparisons.push(compare(&slices, b));
    }
    report.slices = slices;
    report
}

/// `Ok((score, both_empty))`, or a warning for a slice that cannot be scored.
fn score_slice(t: &GroundTruth, p: &SlicePrediction, rule: DetectionRule) -> Result<(SliceScore, bool), String> {
    if !p.score.is_finite() {
        return Err(format!("{}: non-finite score {}", t.slice_id, p.score));
    }
    let pixels = p.mask.as_ref().map_or(0, BinaryMask::count);
    let predicted = match rule {
        DetectionRule::Detector => p.detected,
        DetectionRule::Segmentation { min_pixels } => {
            p.mask.as_ref().is_some_and(|m| seg_detection_rule(m, min_pixels))
        }
    };
    let mut score = SliceScore {
        slice_id: t.slice_id.clone(),
        patient_id: t.patient_id.clone(),
        label: t.positive,
        predicted,
        score: p.score,
        predicted_pixels: pixels,
        dice: None,
        iou: None,
    };
    let mut both_empty = false;
    if let (true, Some(gt)) = (t.positive, &t.mask) {
        let empty = BinaryMask::new(gt.width(), gt.height());
        let o = overlap(gt, p.mask.as_ref().unwrap_or(&empty)).map_err(|e| format!("{}: {e}", t.slice_id))?;
        if o.both_empty {
            both_empty = true;
        } else {
            score.dice = Some(o.dice);
            score.iou = Some(o.iou);
        }
    }
    Ok((score, both_empty))
}

fn compare(slices: &[SliceScore], baseline: &BaselineScores) -> Comparison {
    let pick = |s: &SliceScore| match baseline.metric.as_str() {
        "iou" => s.iou,
        _ => s.dice,
    };
    let ours: Vec<(&str, f64)> = slices
        .iter()
        .filter_map(|s| pick(s).map(|v| (s.slice_id.as_str(), v)))
        .collect();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (id, v) in &ours {
        if let Some(&bv) = baseline.scores.get(*id) {
            a.push(*v);
            b.push(bv);
        }
    }
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    let (ttest, error) = match ttest_on_differences(&diffs) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };
    Comparison {
        baseline: baseline.name.clone(),
        metric: baseline.metric.clone(),
        n: a.len(),
        unmatched: ours.len() - a.len(),
        mean: mean(&a),
        baseline_mean: mean(&b),
        ttest,
        error,
    }
}

fn fmt_ratio(r: &Ratio) -> String {
    if r.undefined {
        format!("{:.3}*", r.value)
    } else {
        format!("{:.3}", r.value)
    }
}

fn fmt_mean(m: &MeanStderr) -> String {
    match m.stderr {
        Some(se) => format!("{:.3} ± {:.3}", m.mean, se),
        None => format!("{:.3}", m.mean),
    }
}

/// Left-aligned first column, right-aligned rest, two spaces apart.
fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| {
            rows.iter()
                .filter_map(|r| r.get(c))
                .map(|s| s.chars().count())
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c == 0 {
                line.push_str(cell);
                line.extend(std::iter::repeat_n(' ', pad));
            } else {
                line.push_str("  ");
                line.extend(std::iter::repeat_n(' ', pad));
                line.push_str(cell);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

impl EvaluationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text: detection metrics as rows, then Dice/IoU as mean ± SE,
    /// then the paired t-tests.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Evaluation: {} ({} slices)", self.method, self.slices_evaluated);
        for w in &self.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        if let Some(d) = &self.detection {
            let rule = match d.rule {
                DetectionRule::Detector => "detector".to_string(),
                DetectionRule::Segmentation { min_pixels } => format!("mask > {min_pixels} px"),
            };
            let _ = writeln!(out, "\nDetection (slice-wise, rule: {rule})");
            let m = &d.metrics;
            let rows = vec![
                vec!["Metric".to_string(), self.method.clone()],
                vec!["Accuracy".into(), fmt_ratio(&m.accuracy)],
                vec!["Precision".into(), fmt_ratio(&m.precision)],
                vec!["Recall".into(), fmt_ratio(&m.recall)],
                vec!["AUC".into(), d.auc.map_or("n/a".into(), |a| format!("{a:.3}"))],
                vec!["F1-score".into(), fmt_ratio(&m.f1)],
                vec!["Specificity".into(), fmt_ratio(&m.specificity)],
            ];
            out.push_str(&render_table(&rows));
            let c = &d.counts;
            let _ = writeln!(
                out,
                "TP {}  FP {}  TN {}  FN {}  (* undefined, reported as 0)",
                c.tp, c.fp, c.tn, c.fn_
            );
        }
        if let Some(r) = &self.patient_recall {
            let _ = writeln!(out, "Patient recall: {}/{} = {:.4}", r.detected, r.positive, r.recall);
        }
        if let Some(s) = &self.segmentation {
            let _ = writeln!(out, "\nSegmentation (n = {} ICH slices)", s.dice.n);
            let rows = vec![
                vec!["Model".to_string(), "Dice".into(), "IoU".into()],
                vec![self.method.clone(), fmt_mean(&s.dice), fmt_mean(&s.iou)],
            ];
            out.push_str(&render_table(&rows));
            if s.both_empty_excluded > 0 {
                let _ = writeln!(
                    out,
                    "{} slice(s) with empty mask and prediction excluded",
                    s.both_empty_excluded
                );
            }
        }
        if !self.comparisons.is_empty() {
            let _ = writeln!(out, "\nPaired t-tests ({} minus baseline)", self.method);
            let mut rows = vec![vec![
                "Baseline".to_string(),
                "Metric".into(),
                "n".into(),
                "Mean".into(),
                "Baseline".into(),
                "t".into(),
                "p".into(),
            ]];
            for c in &self.comparisons {
                let (t, p) = match &c.ttest {
                    Some(tt) => (tt.t.map_or("inf".into(), |t| format!("{t:.3}")), format!("{:.4}", tt.p)),
                    None => ("-".into(), c.error.clone().unwrap_or_default()),
                };
                rows.push(vec![
                    c.baseline.clone(),
                    c.metric.clone(),
                    c.n.to_string(),
                    format!("{:.3}", c.mean),
                    format!("{:.3}", c.baseline_mean),
                    t,
                    p,
                ]);
            }
            out.push_str(&render_table(&rows));
        }
        out
    }

    /// `slice_id,patient_id,label,predicted,score,predicted_pixels,dice,iou`.
    pub fn scores_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "slice_id",
            "patient_id",
            "label",
            "predicted",
            "score",
            "predicted_pixels",
            "dice",
            "iou",
        ])
        .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for s in &self.slices {
            w.write_record([
                s.slice_id.clone(),
                s.patient_id.clone(),
                u8::from(s.label).to_string(),
                u8::from(s.predicted).to_string(),
                s.score.to_string(),
                s.predicted_pixels.to_string(),
                opt(s.dice),
                opt(s.iou),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }
}
