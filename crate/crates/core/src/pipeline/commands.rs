use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::{ImageBuffer, Rgb};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DetectorSource, SegmenterSource, ValidConfig};
use super::overlay::{render_overlay, OverlayLayers, Palette};
use super::PipelineError;
use crate::dataset::{convert_bhx, load_mask, write_annotations, write_mask, Annotations, DatasetIndex, SliceRecord};
use crate::detection::{
    detect as run_detector, DetectionFile, DetectorBackend, RawDetection, ReplayDetector, SliceDetection, StubDetector,
};
use crate::imaging::{make_composite, CompositeImage, WindowSpec};
use crate::metrics::{evaluate_run, ground_truth_from_index, BaselineScores, EvaluationReport, SlicePrediction};
use crate::prompt::{strip_skull, PerturbSpec, PromptConfig};
use crate::raster::{BinaryMask, Point};
use crate::segmentation::{
    segment_slice, FillBoxSegmenter, MaskOracleSegmenter, ReplaySegmenter, SegmenterBackend, SliceContext, SliceReport,
    ThresholdSegmenter, VariantKind, VoteRule,
};

pub const COMPOSITES_DIR: &str = "composites";
pub const MASKS_DIR: &str = "masks";
pub const OVERLAYS_DIR: &str = "overlays";
pub const DETECTIONS_FILE: &str = "detections.json";
pub const RUN_REPORT_FILE: &str = "run_report.json";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const EVALUATION_TABLE_FILE: &str = "evaluation.txt";
pub const SCORES_FILE: &str = "scores.csv";
pub const INDEX_FILE: &str = "index.json";

/// File name for a slice id: anything outside `[A-Za-z0-9._-]` becomes `_`.
fn file_stem(slice_id: &str) -> String {
    let s: String = slice_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.starts_with('.') {
        format!("_{s}")
    } else {
        s
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| PipelineError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn load_index(v: &ValidConfig) -> Result<DatasetIndex, PipelineError> {
    let index = DatasetIndex::from_manifest(&v.config.manifest).map_err(PipelineError::runtime)?;
    for issue in index.issues() {
        log::warn!("{issue}");
    }
    for r in index.rejected_annotations() {
        log::warn!("annotation row {} rejected: {}", r.row, r.reason);
    }
    Ok(index)
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .thread_name(|i| format!("ichseg-worker-{i}"))
        .build()
        .map_err(PipelineError::runtime)
}

/// One worker's backends.
struct Backends {
    detector: Box<dyn DetectorBackend>,
    segmenter: Option<Box<dyn SegmenterBackend>>,
}

/// Builds fresh backend instances; shared read-only inputs are loaded once.
struct BackendFactory<'a> {
    v: &'a ValidConfig,
    index: &'a DatasetIndex,
    with_segmenter: bool,
    replay_detections: Option<DetectionFile>,
    oracle_masks: Option<Arc<BTreeMap<String, BinaryMask>>>,
}

impl<'a> BackendFactory<'a> {
    fn new(v: &'a ValidConfig, index: &'a DatasetIndex, with_segmenter: bool) -> Result<Self, PipelineError> {
        let replay_detections = match &v.config.detector.backend {
            DetectorSource::Replay { path } => Some(DetectionFile::load(path).map_err(PipelineError::runtime)?),
            _ => None,
        };
        let oracle_masks = match (&v.config.segmenter, with_segmenter) {
            (SegmenterSource::Oracle, true) => {
                let mut masks = BTreeMap::new();
                for r in index.records() {
                    if let Some(m) = index.load_mask(r).map_err(PipelineError::runtime)? {
                        masks.insert(r.slice_id.clone(), m);
                    }
                }
                Some(Arc::new(masks))
            }
            _ => None,
        };
        Ok(Self {
            v,
            index,
            with_segmenter,
            replay_detections,
            oracle_masks,
        })
    }

    fn build(&self) -> Result<Backends, PipelineError> {
        let c = &self.v.config;
        let detector: Box<dyn DetectorBackend> = match &c.detector.backend {
            DetectorSource::Stub { noise } => Box::new(StubDetector::new(self.index, *noise, c.seed)),
            DetectorSource::Replay { .. } => Box::new(ReplayDetector::new(
                self.replay_detections.clone().expect("replay detections loaded"),
            )),
            #[cfg(feature = "onnx")]
            DetectorSource::Onnx { descriptor } => {
                Box::new(crate::detection::OnnxDetector::load(descriptor).map_err(PipelineError::runtime)?)
            }
            #[cfg(not(feature = "onnx"))]
            DetectorSource::Onnx { .. } => return Err(PipelineError::Runtime("built without ONNX support".into())),
        };
        let segmenter: Option<Box<dyn SegmenterBackend>> = if !self.with_segmenter {
            None
        } else {
            Some(match &c.segmenter {
                SegmenterSource::Oracle => Box::new(MaskOracleSegmenter::new(
                    self.oracle_masks.as_deref().cloned().unwrap_or_default(),
                )),
                SegmenterSource::FillBox => Box::new(FillBoxSegmenter::new()),
                SegmenterSource::Threshold { brain_min, bone_max } => {
                    Box::new(ThresholdSegmenter::new(*brain_min, *bone_max))
                }
                SegmenterSource::Replay { path } => {
                    Box::new(ReplaySegmenter::load(path).map_err(PipelineError::runtime)?)
                }
                #[cfg(feature = "onnx")]
                SegmenterSource::Onnx { descriptor } => {
                    Box::new(crate::segmentation::OnnxSegmenter::load(descriptor).map_err(PipelineError::runtime)?)
                }
                #[cfg(not(feature = "onnx"))]
                SegmenterSource::Onnx { .. } => {
                    return Err(PipelineError::Runtime("built without ONNX support".into()))
                }
            })
        };
        Ok(Backends { detector, segmenter })
    }
}

/// Runs `f` over every record on the configured worker pool, each call
/// holding one worker's backends. Output order follows the index.
fn map_records<T, F>(
    v: &ValidConfig,
    index: &DatasetIndex,
    with_segmenter: bool,
    f: F,
) -> Result<(Vec<T>, [String; 2]), PipelineError>
where
    T: Send,
    F: Fn(&mut Backends, &SliceRecord) -> T + Sync,
{
    let factory = BackendFactory::new(v, index, with_segmenter)?;
    let pool = thread_pool(v.config.workers)?;
    let n = pool.current_num_threads().min(index.len()).max(1);
    let first = factory.build()?;
    let names = [
        first.detector.capabilities().name.clone(),
        first
            .segmenter
            .as_ref()
            .map(|s| s.capabilities().name.clone())
            .unwrap_or_default(),
    ];
    let mut idle = vec![first];
    for _ in 1..n {
        idle.push(factory.build()?);
    }
    let idle = Mutex::new(idle);
    let out = pool.install(|| {
        index
            .records()
            .par_iter()
            .map(|r| {
                let taken = idle.lock().expect("backend pool").pop();
                let mut b = match taken {
                    Some(b) => b,
                    None => factory.build()?,
                };
                let out = f(&mut b, r);
                idle.lock().expect("backend pool").push(b);
                Ok(out)
            })
            .collect::<Result<Vec<T>, PipelineError>>()
    })?;
    Ok((out, names))
}

/// One composite written by `preprocess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeEntry {
    pub slice_id: String,
    pub patient_id: String,
    pub slice_index: i64,
    /// Relative to the output directory.
    pub path: String,
    pub width: u32,
    pub height: u32,
}

/// `composites/manifest.json`: the windows used and one entry per slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeManifest {
    pub windows: Vec<WindowSpec>,
    pub slices: Vec<CompositeEntry>,
}

fn composite_png(c: &CompositeImage) -> ImageBuffer<Rgb<u16>, Vec<u16>> {
    let q = |v: f32| (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
    ImageBuffer::from_fn(c.width(), c.height(), |x, y| Rgb(c.pixel(x, y).map(q)))
}

/// Writes every slice's composite as a 16-bit RGB PNG (brain, subdural,
/// bone scaled to `0..=65535`) plus a manifest. Re-running overwrites with
/// identical bytes.
pub fn preprocess(v: &ValidConfig) -> Result<CompositeManifest, PipelineError> {
    let index = load_index(v)?;
    let pool = thread_pool(v.config.workers)?;
    let composites: Vec<Result<CompositeImage, String>> = pool.install(|| {
        index
            .records()
            .par_iter()
            .map(|r| {
                let slice = index.load_slice(r).map_err(|e| e.to_string())?;
                Ok(make_composite(&slice, &v.windows))
            })
            .collect()
    });
    let failures: Vec<String> = composites.iter().filter_map(|c| c.as_ref().err().cloned()).collect();
    if !failures.is_empty() {
        return Err(PipelineError::Runtime(failures.join("\n")));
    }
    let out = &v.config.output_dir;
    let mut manifest = CompositeManifest {
        windows: v.windows.specs().to_vec(),
        slices: Vec::with_capacity(index.len()),
    };
    for (r, c) in index.records().iter().zip(composites) {
        let c = c.expect("failures handled above");
        let rel = format!("{COMPOSITES_DIR}/{}.png", file_stem(&r.slice_id));
        let path = out.join(&rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::Runtime(format!("{}: {e}", dir.display())))?;
        }
        composite_png(&c)
            .save(&path)
            .map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
        manifest.slices.push(CompositeEntry {
            slice_id: r.slice_id.clone(),
            patient_id: r.patient_id.clone(),
            slice_index: r.slice_index,
            path: rel,
            width: c.width(),
            height: c.height(),
        });
    }
    write_file(
        &out.join(COMPOSITES_DIR).join("manifest.json"),
        to_json(&manifest).as_bytes(),
    )?;
    Ok(manifest)
}

/// Settings that shaped a run, echoed into its report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunParameters {
    pub seed: u64,
    pub variant: VariantKind,
    pub windows: Vec<WindowSpec>,
    pub perturbation: PerturbSpec,
    pub prompts: PromptConfig,
    pub vote: VoteRule,
    pub confidence_threshold: f64,
    pub detector: String,
    pub segmenter: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRun {
    pub slice_id: String,
    pub patient_id: String,
    /// Boxes at or above the threshold; `score` is the best confidence of
    /// any box, kept or not, so it ranks slices for the AUC.
    pub detection: Option<SliceDetection>,
    pub segmentation: Option<SliceReport>,
    /// Relative to the output directory.
    pub mask: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub slices: usize,
    pub failed_slices: Vec<String>,
    pub failed_boxes: usize,
    pub degraded_members: usize,
}

impl RunSummary {
    /// 0 when every slice succeeded, 3 when some failed, 2 when all did.
    pub fn exit_code(&self) -> i32 {
        match self.failed_slices.len() {
            0 => 0,
            n if n == self.slices => 2,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub parameters: RunParameters,
    pub summary: RunSummary,
    pub slices: Vec<SliceRun>,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))
    }
}

fn parameters(v: &ValidConfig, names: [String; 2]) -> RunParameters {
    let [detector, segmenter] = names;
    RunParameters {
        seed: v.config.seed,
        variant: v.config.variant,
        windows: v.windows.specs().to_vec(),
        perturbation: v.ensemble.perturbation.with_seed(0),
        prompts: v.ensemble.prompts,
        vote: v.ensemble.vote,
        confidence_threshold: v.config.detector.confidence_threshold,
        detector,
        segmenter,
    }
}

/// Boxes at threshold 0 for scoring, and those at the operating threshold.
fn detect_slice(
    composite: &CompositeImage,
    detector: &mut dyn DetectorBackend,
    threshold: f64,
) -> Result<SliceDetection, String> {
    let all = run_detector(composite, detector, 0.0).map_err(|e| e.to_string())?;
    let score = all.iter().map(|b| b.confidence).fold(0.0, f64::max);
    let boxes: Vec<_> = all.into_iter().filter(|b| b.confidence >= threshold).collect();
    Ok(SliceDetection {
        positive: !boxes.is_empty(),
        score,
        boxes,
    })
}

/// Runs the detector over every slice and writes all boxes (threshold 0)
/// to `detections.json`, ready for a replay detector.
pub fn detect(v: &ValidConfig) -> Result<(DetectionFile, RunSummary), PipelineError> {
    let index = load_index(v)?;
    let (results, _) = map_records(v, &index, false, |b, r| {
        let slice = index.load_slice(r).map_err(|e| e.to_string())?;
        let composite = make_composite(&slice, &v.windows);
        run_detector(&composite, b.detector.as_mut(), 0.0).map_err(|e| e.to_string())
    })?;
    let mut file = DetectionFile::default();
    let mut summary = RunSummary {
        slices: index.len(),
        ..RunSummary::default()
    };
    for (r, res) in index.records().iter().zip(results) {
        match res {
            Ok(boxes) => {
                let raw = boxes
                    .into_iter()
                    .map(|b| RawDetection {
                        x0: b.x0,
                        y0: b.y0,
                        x1: b.x1,
                        y1: b.y1,
                        subtype: b.subtype,
                        confidence: b.confidence,
                    })
                    .collect();
                file.slices.insert(r.slice_id.clone(), raw);
            }
            Err(e) => {
                log::error!("{}: {e}", r.slice_id);
                summary.failed_slices.push(r.slice_id.clone());
            }
        }
    }
    let mut text = file.to_json();
    text.push('\n');
    write_file(&v.config.output_dir.join(DETECTIONS_FILE), text.as_bytes())?;
    Ok((file, summary))
}

fn process_slice(
    v: &ValidConfig,
    index: &DatasetIndex,
    r: &SliceRecord,
    b: &mut Backends,
) -> Result<(SliceDetection, SliceReport, BinaryMask), (Option<SliceDetection>, String)> {
    let slice = index.load_slice(r).map_err(|e| (None, e.to_string()))?;
    let composite = make_composite(&slice, &v.windows);
    let detection =
        detect_slice(&composite, b.detector.as_mut(), v.config.detector.confidence_threshold).map_err(|e| (None, e))?;
    if detection.boxes.is_empty() {
        let report = SliceReport {
            slice_id: r.slice_id.clone(),
            variant: v.config.variant,
            boxes: Vec::new(),
            mask_pixels: 0,
        };
        return Ok((detection, report, BinaryMask::new(r.width, r.height)));
    }
    let fail = |e: String| (Some(detection.clone()), e);
    let brain = index.load_brain_mask(r).map_err(|e| fail(e.to_string()))?;
    let stripped = strip_skull(&slice, brain.as_ref()).map_err(|e| fail(e.to_string()))?;
    let ctx = SliceContext {
        composite: &composite,
        stripped: &stripped,
    };
    let segmenter = b.segmenter.as_mut().expect("segmenter built").as_mut();
    let out = segment_slice(
        ctx,
        &detection.boxes,
        v.config.variant,
        segmenter,
        &v.ensemble,
        v.config.seed,
    )
    .map_err(|e| fail(e.to_string()))?;
    Ok((detection, out.report, out.mask))
}

/// Detection, prompting, ensemble segmentation and voting for every slice.
/// Writes `masks/<slice>.png` for each slice that succeeded and
/// `run_report.json`. A failing slice is recorded and the run goes on.
pub fn segment(v: &ValidConfig) -> Result<RunReport, PipelineError> {
    let index = load_index(v)?;
    let (results, names) = map_records(v, &index, true, |b, r| process_slice(v, &index, r, b))?;
    let out = &v.config.output_dir;
    let mut report = RunReport {
        parameters: parameters(v, names),
        summary: RunSummary {
            slices: index.len(),
            ..RunSummary::default()
        },
        slices: Vec::with_capacity(index.len()),
    };
    for (r, res) in index.records().iter().zip(results) {
        let rel = format!("{MASKS_DIR}/{}.png", file_stem(&r.slice_id));
        let path = out.join(&rel);
        let mut run = SliceRun {
            slice_id: r.slice_id.clone(),
            patient_id: r.patient_id.clone(),
            detection: None,
            segmentation: None,
            mask: None,
            error: None,
        };
        match res {
            Ok((detection, seg, mask)) => {
                write_mask(&path, &mask).map_err(PipelineError::runtime)?;
                report.summary.failed_boxes += seg.failed_boxes();
                report.summary.degraded_members += seg.degraded_members();
                run.detection = Some(detection);
                run.segmentation = Some(seg);
                run.mask = Some(rel);
            }
            Err((detection, e)) => {
                log::error!("{}: {e}", r.slice_id);
                if path.is_file() {
                    fs::remove_file(&path).map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
                }
                report.summary.failed_slices.push(r.slice_id.clone());
                run.detection = detection;
                run.error = Some(e);
            }
        }
        report.slices.push(run);
    }
    write_file(&out.join(RUN_REPORT_FILE), to_json(&report).as_bytes())?;
    Ok(report)
}

/// Scores the masks and detections of a previous `segment` against the
/// dataset and writes `evaluation.json`, `evaluation.txt` and `scores.csv`.
pub fn evaluate(v: &ValidConfig) -> Result<EvaluationReport, PipelineError> {
    let index = load_index(v)?;
    let out = &v.config.output_dir;
    let run = RunReport::load(&out.join(RUN_REPORT_FILE))?;
    let truth = ground_truth_from_index(&index).map_err(PipelineError::runtime)?;
    let mut predictions = Vec::with_capacity(run.slices.len());
    for s in run.slices.iter().filter(|s| s.error.is_none()) {
        let (Some(det), Some(rel)) = (&s.detection, &s.mask) else {
            continue;
        };
        let dims = index.record(&s.slice_id).map(|r| (r.width, r.height));
        let mask = load_mask(&out.join(rel), dims).map_err(PipelineError::runtime)?;
        predictions.push(SlicePrediction {
            slice_id: s.slice_id.clone(),
            detected: det.positive,
            score: det.score,
            mask: Some(mask),
        });
    }
    let baselines = v
        .config
        .evaluation
        .baselines
        .iter()
        .map(|b| BaselineScores::load_csv(&b.path, &b.metric).map_err(PipelineError::runtime))
        .collect::<Result<Vec<_>, _>>()?;
    let report = evaluate_run(&truth, &predictions, &v.eval, &baselines);
    write_file(&out.join(EVALUATION_FILE), to_json(&report).as_bytes())?;
    write_file(&out.join(EVALUATION_TABLE_FILE), report.to_table().as_bytes())?;
    write_file(&out.join(SCORES_FILE), report.scores_csv().as_bytes())?;
    Ok(report)
}

/// `segment` followed by `evaluate`.
pub fn run(v: &ValidConfig) -> Result<(RunReport, EvaluationReport), PipelineError> {
    let report = segment(v)?;
    let eval = evaluate(v)?;
    Ok((report, eval))
}

/// Renders `overlays/<slice>.png` for the given slices (all when `None`):
/// reference and predicted contours, kept boxes and member 0's points.
/// Works before a run too, showing the reference alone.
pub fn overlay(v: &ValidConfig, slice_ids: Option<&[String]>) -> Result<Vec<PathBuf>, PipelineError> {
    let index = load_index(v)?;
    let out = &v.config.output_dir;
    let run_path = out.join(RUN_REPORT_FILE);
    let runs: BTreeMap<String, SliceRun> = if run_path.is_file() {
        RunReport::load(&run_path)?
            .slices
            .into_iter()
            .map(|s| (s.slice_id.clone(), s))
            .collect()
    } else {
        BTreeMap::new()
    };
    let records: Vec<&SliceRecord> = match slice_ids {
        None => index.records().iter().collect(),
        Some(ids) => ids
            .iter()
            .map(|id| {
                index
                    .record(id)
                    .ok_or_else(|| PipelineError::Runtime(format!("slice `{id}` is not in the index")))
            })
            .collect::<Result<_, _>>()?,
    };
    let mut written = Vec::with_capacity(records.len());
    for r in records {
        let slice = index.load_slice(r).map_err(PipelineError::runtime)?;
        let composite = make_composite(&slice, &v.windows);
        let truth = index.load_mask(r).map_err(PipelineError::runtime)?;
        let run = runs.get(&r.slice_id);
        let prediction = match run.and_then(|s| s.mask.as_ref()) {
            Some(rel) => Some(load_mask(&out.join(rel), Some((r.width, r.height))).map_err(PipelineError::runtime)?),
            None => None,
        };
        let boxes: Vec<_> = run
            .and_then(|s| s.detection.as_ref())
            .map(|d| d.boxes.iter().filter_map(|b| b.pixel_box(r.width, r.height)).collect())
            .unwrap_or_default();
        let (mut pos, mut neg): (Vec<Point>, Vec<Point>) = (Vec::new(), Vec::new());
        for p in run
            .and_then(|s| s.segmentation.as_ref())
            .into_iter()
            .flat_map(|s| &s.boxes)
            .filter_map(|b| b.prompt.as_ref())
        {
            pos.extend(&p.positive_points);
            neg.extend(&p.negative_points);
        }
        let layers = OverlayLayers {
            prediction: prediction.as_ref(),
            truth: truth.as_ref(),
            boxes: &boxes,
            positive_points: &pos,
            negative_points: &neg,
        };
        let img = render_overlay(&composite, &layers, &Palette::default())
            .map_err(|e| PipelineError::Runtime(format!("{}: {e}", r.slice_id)))?;
        let path = out.join(OVERLAYS_DIR).join(format!("{}.png", file_stem(&r.slice_id)));
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| PipelineError::Runtime(format!("{}: {e}", dir.display())))?;
        }
        img.save(&path)
            .map_err(|e| PipelineError::Runtime(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the resolved dataset index (records, patient grouping, rejected
/// annotation rows) to `index.json`.
pub fn export_index(v: &ValidConfig) -> Result<PathBuf, PipelineError> {
    let index = load_index(v)?;
    let path = v.config.output_dir.join(INDEX_FILE);
    let mut text = index.to_json();
    text.push('\n');
    write_file(&path, text.as_bytes())?;
    Ok(path)
}

/// Converts a BHX-style label export into the canonical annotation CSV.
pub fn convert_bhx_file(input: &Path, output: &Path) -> Result<Annotations, PipelineError> {
    let file = fs::File::open(input).map_err(|e| PipelineError::Runtime(format!("{}: {e}", input.display())))?;
    let ann = convert_bhx(file, input).map_err(PipelineError::runtime)?;
    let mut buf = Vec::new();
    write_annotations(&mut buf, &ann.boxes)
        .map_err(|e| PipelineError::Runtime(format!("{}: {e}", output.display())))?;
    write_file(output, &buf)?;
    Ok(ann)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{PipelineConfig, SegmenterSource};
    use crate::synthetic::{write_fixture, SyntheticSpec};

    fn fixture(dir: &Path) -> PipelineConfig {
        let manifest = write_fixture(&dir.join("data"), &SyntheticSpec::default()).unwrap();
        PipelineConfig {
            manifest,
            output_dir: dir.join("out"),
            workers: 2,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn file_stems_are_safe() {
        assert_eq!(file_stem("p1_s02"), "p1_s02");
        assert_eq!(file_stem("a/b c"), "a_b_c");
        assert_eq!(file_stem("../x"), "_.._x");
    }

    #[test]
    fn preprocess_writes_one_composite_per_slice() {
        let dir = tempfile::tempdir().unwrap();
        let v = fixture(dir.path()).validate().unwrap();
        let m = preprocess(&v).unwrap();
        assert_eq!(m.slices.len(), 12);
        let first = fs::read(dir.path().join("out").join(&m.slices[0].path)).unwrap();
        let img = image::open(dir.path().join("out").join(&m.slices[0].path)).unwrap();
        assert_eq!(img.color(), image::ColorType::Rgb16);
        preprocess(&v).unwrap();
        assert_eq!(fs::read(dir.path().join("out").join(&m.slices[0].path)).unwrap(), first);
    }

    #[test]
    fn threshold_run_recovers_synthetic_lesions() {
        let dir = tempfile::tempdir().unwrap();
        let v = fixture(dir.path()).validate().unwrap();
        let (report, eval) = run(&v).unwrap();
        assert_eq!(report.summary.exit_code(), 0);
        assert_eq!(eval.segmentation.unwrap().dice.mean, 1.0);
        assert_eq!(eval.detection.unwrap().metrics.accuracy.value, 1.0);
        let positive = report
            .slices
            .iter()
            .find(|s| s.detection.as_ref().unwrap().positive)
            .unwrap();
        assert!(positive.segmentation.as_ref().unwrap().boxes[0].prompt.is_some());
    }

    #[test]
    fn box_only_segmenter_with_point_variant_fails_slices_naming_the_member() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = fixture(dir.path());
        c.segmenter = SegmenterSource::FillBox;
        c.variant = VariantKind::Point;
        let report = segment(&c.validate().unwrap()).unwrap();
        assert_eq!(report.summary.failed_slices.len(), 6);
        assert_eq!(report.summary.exit_code(), 3);
        let failed = report.slices.iter().find(|s| s.error.is_some()).unwrap();
        assert!(
            failed.error.as_ref().unwrap().contains("member 0"),
            "{:?}",
            failed.error
        );
    }

    #[test]
    fn detect_output_replays_into_segment() {
        let dir = tempfile::tempdir().unwrap();
        let c = fixture(dir.path());
        let (file, summary) = detect(&c.validate().unwrap()).unwrap();
        assert_eq!(summary.exit_code(), 0);
        assert_eq!(file.slices.len(), 12);
        let direct = segment(&c.validate().unwrap()).unwrap();
        let mut replay = c.clone();
        replay.detector.backend = DetectorSource::Replay {
            path: dir.path().join("out").join(DETECTIONS_FILE),
        };
        replay.output_dir = dir.path().join("replayed");
        let replayed = segment(&replay.validate().unwrap()).unwrap();
        assert_eq!(
            direct.slices.iter().map(|s| &s.segmentation).collect::<Vec<_>>(),
            replayed.slices.iter().map(|s| &s.segmentation).collect::<Vec<_>>()
        );
    }

    #[test]
    fn overlay_and_index_export() {
        let dir = tempfile::tempdir().unwrap();
        let v = fixture(dir.path()).validate().unwrap();
        let before = overlay(&v, Some(&["P000_S000".to_string()])).unwrap();
        assert_eq!(before.len(), 1);
        run(&v).unwrap();
        let all = overlay(&v, None).unwrap();
        assert_eq!(all.len(), 12);
        assert!(overlay(&v, Some(&["nope".to_string()])).is_err());
        let index = export_index(&v).unwrap();
        assert!(fs::read_to_string(index).unwrap().contains("\"patients\""));
    }
}
