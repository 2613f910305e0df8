use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::detection::DEFAULT_CONFIDENCE_THRESHOLD;
use crate::imaging::{ImagingError, WindowName, WindowSet, WindowSpec};
use crate::metrics::{DetectionRule, EvalConfig};
use crate::prompt::{PerturbSpec, PromptConfig};
use crate::segmentation::{EnsembleConfig, VariantKind, VoteRule};

/// Environment variable that replaces `output_dir` (command-line flags still win).
pub const OUTPUT_DIR_ENV: &str = "ICHSEG_OUTPUT_DIR";

/// Where slice-level boxes come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DetectorSource {
    /// Ground-truth boxes from the dataset annotations, optionally jittered once.
    Stub {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<PerturbSpec>,
    },
    /// A detections file, such as the one `detect` writes.
    Replay { path: PathBuf },
    /// An exported detector graph, given by its JSON descriptor.
    Onnx { descriptor: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub backend: DetectorSource,
    pub confidence_threshold: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            backend: DetectorSource::Stub { noise: None },
            confidence_threshold: DEFAULT_CONFIDENCE_THRESHOLD,
        }
    }
}

fn default_brain_min() -> f32 {
    0.625
}

fn default_bone_max() -> f32 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SegmenterSource {
    /// The dataset's reference masks, cut to the prompt box.
    Oracle,
    /// The prompt box, filled.
    FillBox,
    /// Brain-window threshold with bone rejection.
    Threshold {
        #[serde(default = "default_brain_min")]
        brain_min: f32,
        #[serde(default = "default_bone_max")]
        bone_max: f32,
    },
    /// Precomputed masks: `{"masks": {"<slice_id>": "path.png"}}`.
    Replay { path: PathBuf },
    /// Exported encoder/decoder graphs, given by their JSON descriptor.
    Onnx { descriptor: PathBuf },
}

impl Default for SegmenterSource {
    fn default() -> Self {
        SegmenterSource::Threshold {
            brain_min: default_brain_min(),
            bone_max: default_bone_max(),
        }
    }
}

fn default_metric() -> String {
    "dice".into()
}

/// Per-slice scores of another method, for paired t-tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub path: PathBuf,
    /// Column compared against the same column of this run.
    #[serde(default = "default_metric")]
    pub metric: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub method: String,
    pub rule: DetectionRule,
    pub baselines: Vec<BaselineSpec>,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            method: e.method,
            rule: e.rule,
            baselines: Vec::new(),
        }
    }
}

/// Everything a run depends on. Relative paths are resolved against the
/// config file's directory by [`PipelineConfig::load`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    /// Worker threads over slices; 0 uses one per core.
    pub workers: usize,
    pub windows: Vec<WindowSpec>,
    pub variant: VariantKind,
    /// `seed` inside is ignored; member seeds derive from the run seed.
    pub perturbation: PerturbSpec,
    pub prompts: PromptConfig,
    pub vote: VoteRule,
    pub detector: DetectorConfig,
    pub segmenter: SegmenterSource,
    pub evaluation: EvaluationConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            manifest: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            seed: 0,
            workers: 0,
            windows: WindowName::ALL.map(WindowSpec::default_for).to_vec(),
            variant: VariantKind::PointBBox,
            perturbation: PerturbSpec::default(),
            prompts: PromptConfig::default(),
            vote: VoteRule::StrictMajority,
            detector: DetectorConfig::default(),
            segmenter: SegmenterSource::default(),
            evaluation: EvaluationConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the file and the environment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub manifest: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub variant: Option<VariantKind>,
}

/// One invalid field: a dotted path into the config and what is wrong.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

/// A config that passed [`PipelineConfig::validate`], with its parsed parts.
#[derive(Debug, Clone)]
pub struct ValidConfig {
    pub config: PipelineConfig,
    pub windows: WindowSet,
    pub ensemble: EnsembleConfig,
    pub eval: EvalConfig,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if !p.as_os_str().is_empty() && p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses a JSON config and resolves its relative paths against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Validation(vec![ConfigIssue {
                path: "<file>".into(),
                message: format!("{}: {e}", path.display()),
            }])
        })?;
        let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| {
            PipelineError::Validation(vec![ConfigIssue {
                path: "<file>".into(),
                message: format!("{}: {e}", path.display()),
            }])
        })?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.manifest);
        resolve(base, &mut self.output_dir);
        match &mut self.detector.backend {
            DetectorSource::Stub { .. } => {}
            DetectorSource::Replay { path } => resolve(base, path),
            DetectorSource::Onnx { descriptor } => resolve(base, descriptor),
        }
        match &mut self.segmenter {
            SegmenterSource::Replay { path } => resolve(base, path),
            SegmenterSource::Onnx { descriptor } => resolve(base, descriptor),
            _ => {}
        }
        for b in &mut self.evaluation.baselines {
            resolve(base, &mut b.path);
        }
    }

    /// Applies `env_output_dir` (normally `$ICHSEG_OUTPUT_DIR`), then the flags.
    pub fn apply_overrides(&mut self, env_output_dir: Option<PathBuf>, flags: &Overrides) {
        if let Some(d) = env_output_dir.filter(|d| !d.as_os_str().is_empty()) {
            self.output_dir = d;
        }
        if let Some(m) = &flags.manifest {
            self.manifest = m.clone();
        }
        if let Some(d) = &flags.output_dir {
            self.output_dir = d.clone();
        }
        if let Some(s) = flags.seed {
            self.seed = s;
        }
        if let Some(w) = flags.workers {
            self.workers = w;
        }
        if let Some(v) = flags.variant {
            self.variant = v;
        }
    }

    /// Checks every field and reports all problems at once. Touches the
    /// file system only to check that inputs exist.
    pub fn validate(&self) -> Result<ValidConfig, PipelineError> {
        let mut issues = Vec::new();
        let mut issue = |path: &str, message: String| {
            issues.push(ConfigIssue {
                path: path.into(),
                message,
            })
        };
        let need_file = |issue: &mut dyn FnMut(&str, String), field: &str, p: &Path| {
            if p.as_os_str().is_empty() {
                issue(field, "required".into());
            } else if !p.is_file() {
                issue(field, format!("{} does not exist", p.display()));
            }
        };

        need_file(&mut issue, "manifest", &self.manifest);
        if self.output_dir.as_os_str().is_empty() {
            issue("output_dir", "required".into());
        }

        let mut windows_ok = true;
        for (i, w) in self.windows.iter().enumerate() {
            match w.validate() {
                Ok(()) => {}
                Err(ImagingError::InvalidWidth { width, .. }) => {
                    windows_ok = false;
                    issue(
                        &format!("windows[{i}].width"),
                        format!("must be finite and > 0, got {width}"),
                    );
                }
                Err(ImagingError::InvalidLevel { level, .. }) => {
                    windows_ok = false;
                    issue(&format!("windows[{i}].level"), format!("must be finite, got {level}"));
                }
                Err(e) => {
                    windows_ok = false;
                    issue(&format!("windows[{i}]"), e.to_string());
                }
            }
        }
        let windows = match WindowSet::new(&self.windows) {
            Ok(w) => Some(w),
            Err(e) => {
                if windows_ok {
                    issue("windows", e.to_string());
                }
                None
            }
        };

        let p = &self.perturbation;
        if p.count == 0 {
            issue("perturbation.count", "must be >= 1".into());
        }
        if p.min_expand_px < 1 {
            issue("perturbation.min_expand_px", "must be >= 1".into());
        }
        if p.min_expand_px > p.max_expand_px {
            issue(
                "perturbation.max_expand_px",
                format!(
                    "must be >= min_expand_px ({}), got {}",
                    p.min_expand_px, p.max_expand_px
                ),
            );
        }

        let q = &self.prompts;
        if q.clusters < 2 || q.clusters >= 255 {
            issue("prompts.clusters", format!("must be in 2..255, got {}", q.clusters));
        }
        if q.positive_points == 0 {
            issue("prompts.positive_points", "must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&q.bone_saturation_threshold) {
            issue(
                "prompts.bone_saturation_threshold",
                format!("must lie in [0, 1], got {}", q.bone_saturation_threshold),
            );
        }

        let t = self.detector.confidence_threshold;
        if !(0.0..=1.0).contains(&t) {
            issue("detector.confidence_threshold", format!("must lie in [0, 1], got {t}"));
        }
        match &self.detector.backend {
            DetectorSource::Stub { noise: Some(n) } => {
                if let Err(e) = n.validate() {
                    issue("detector.backend.noise", e.to_string());
                }
            }
            DetectorSource::Stub { noise: None } => {}
            DetectorSource::Replay { path } => need_file(&mut issue, "detector.backend.path", path),
            DetectorSource::Onnx { descriptor } => {
                need_file(&mut issue, "detector.backend.descriptor", descriptor);
                if !cfg!(feature = "onnx") {
                    issue("detector.backend.kind", "built without ONNX support".into());
                }
            }
        }

        match &self.segmenter {
            SegmenterSource::Threshold { brain_min, bone_max } => {
                if !(0.0..=1.0).contains(brain_min) {
                    issue("segmenter.brain_min", format!("must lie in [0, 1], got {brain_min}"));
                }
                if !(0.0..=1.0).contains(bone_max) {
                    issue("segmenter.bone_max", format!("must lie in [0, 1], got {bone_max}"));
                }
            }
            SegmenterSource::Replay { path } => need_file(&mut issue, "segmenter.path", path),
            SegmenterSource::Onnx { descriptor } => {
                need_file(&mut issue, "segmenter.descriptor", descriptor);
                if !cfg!(feature = "onnx") {
                    issue("segmenter.kind", "built without ONNX support".into());
                }
            }
            SegmenterSource::Oracle | SegmenterSource::FillBox => {}
        }

        if self.evaluation.method.trim().is_empty() {
            issue("evaluation.method", "must not be empty".into());
        }
        for (i, b) in self.evaluation.baselines.iter().enumerate() {
            need_file(&mut issue, &format!("evaluation.baselines[{i}].path"), &b.path);
            if !matches!(b.metric.as_str(), "dice" | "iou") {
                issue(
                    &format!("evaluation.baselines[{i}].metric"),
                    format!("must be `dice` or `iou`, got `{}`", b.metric),
                );
            }
        }

        match windows {
            Some(windows) if issues.is_empty() => Ok(ValidConfig {
                windows,
                ensemble: EnsembleConfig {
                    perturbation: self.perturbation,
                    prompts: self.prompts,
                    vote: self.vote,
                },
                eval: EvalConfig {
                    method: self.evaluation.method.clone(),
                    rule: self.evaluation.rule,
                },
                config: self.clone(),
            }),
            _ => Err(PipelineError::Validation(issues)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid(dir: &Path) -> PipelineConfig {
        std::fs::write(dir.join("manifest.json"), "{}").unwrap();
        PipelineConfig {
            manifest: dir.join("manifest.json"),
            output_dir: dir.join("out"),
            ..PipelineConfig::default()
        }
    }

    fn issues(c: &PipelineConfig) -> Vec<String> {
        match c.validate() {
            Err(PipelineError::Validation(v)) => v.into_iter().map(|i| i.path).collect(),
            Err(e) => panic!("unexpected {e}"),
            Ok(_) => Vec::new(),
        }
    }

    #[test]
    fn defaults_validate_once_manifest_exists() {
        let dir = tempfile::tempdir().unwrap();
        assert!(valid(dir.path()).validate().is_ok());
        assert_eq!(issues(&PipelineConfig::default()), ["manifest"]);
    }

    #[test]
    fn every_invalid_field_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = valid(dir.path());
        c.windows[1].width = 0.0;
        c.perturbation.count = 0;
        c.prompts.clusters = 1;
        c.detector.confidence_threshold = 1.5;
        c.detector.backend = DetectorSource::Replay {
            path: dir.path().join("missing.json"),
        };
        c.evaluation.baselines.push(BaselineSpec {
            path: dir.path().join("manifest.json"),
            metric: "auc".into(),
        });
        assert_eq!(
            issues(&c),
            [
                "windows[1].width",
                "perturbation.count",
                "prompts.clusters",
                "detector.confidence_threshold",
                "detector.backend.path",
                "evaluation.baselines[0].metric",
            ]
        );
    }

    #[test]
    fn missing_window_is_reported_on_the_list() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = valid(dir.path());
        c.windows.pop();
        assert_eq!(issues(&c), ["windows"]);
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("cfg");
        std::fs::create_dir(&sub).unwrap();
        let p = sub.join("run.json");
        std::fs::write(
            &p,
            r#"{"manifest": "../data/manifest.json", "output_dir": "out",
                "detector": {"backend": {"kind": "replay", "path": "det.json"}}}"#,
        )
        .unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.manifest, sub.join("../data/manifest.json"));
        assert_eq!(c.output_dir, sub.join("out"));
        assert_eq!(
            c.detector.backend,
            DetectorSource::Replay {
                path: sub.join("det.json")
            }
        );
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sead": 3}"#).unwrap();
        let err = PipelineConfig::load(&p).unwrap_err();
        assert!(err.to_string().contains("sead"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn flags_beat_environment_beats_file() {
        let mut c = PipelineConfig {
            output_dir: "file".into(),
            ..PipelineConfig::default()
        };
        c.apply_overrides(Some("env".into()), &Overrides::default());
        assert_eq!(c.output_dir, PathBuf::from("env"));
        let flags = Overrides {
            output_dir: Some("flag".into()),
            seed: Some(7),
            variant: Some(VariantKind::Point),
            ..Overrides::default()
        };
        c.apply_overrides(Some("env".into()), &flags);
        assert_eq!(
            (c.output_dir.to_str().unwrap(), c.seed, c.variant),
            ("flag", 7, VariantKind::Point)
        );
    }
}
