use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::nms::{non_max_suppression, DEFAULT_NMS_IOU};
use super::{DetectionError, DetectorBackend, DetectorCapabilities, RawDetection};
use crate::dataset::Subtype;
use crate::imaging::CompositeImage;
use crate::interchange::{
    load_graph, read_descriptor, GraphRef, Letterbox, Normalization, Padding, Placement, Runnable,
};

/// Layout of the detector graph's first output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputLayout {
    /// `[1, 4 + classes, anchors]`: centre x, centre y, width, height, then
    /// per-class scores; suppression is done here.
    Yolov8Raw,
    /// `[1, n, 6]`: `x0, y0, x1, y1, confidence, class`, already suppressed.
    PostNms,
}

fn default_pad() -> Padding {
    Padding {
        value: 114.0 / 255.0,
        normalized: false,
    }
}

fn default_min_confidence() -> f64 {
    0.001
}

fn default_nms_iou() -> f64 {
    DEFAULT_NMS_IOU
}

/// JSON sidecar of an exported detector graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorDescriptor {
    pub kind: String,
    #[serde(flatten)]
    pub graph: GraphRef,
    /// Square network input side.
    pub input_size: u32,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_pad")]
    pub padding: Padding,
    #[serde(default)]
    pub placement: Placement,
    /// Class index to subtype name (`IVH`, `IPH`, `SAH`, `EDH`, `SDH`).
    pub class_names: Vec<String>,
    pub output: OutputLayout,
    /// Raw-layout candidates below this score are dropped before suppression.
    #[serde(default = "default_min_confidence")]
    pub min_confidence: f64,
    #[serde(default = "default_nms_iou")]
    pub nms_iou: f64,
}

/// A detector graph run through tract, with letterboxing in front and
/// coordinate mapping (and, for raw outputs, NMS) behind.
pub struct OnnxDetector {
    caps: DetectorCapabilities,
    descriptor: DetectorDescriptor,
    model: Runnable,
}

impl std::fmt::Debug for OnnxDetector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxDetector")
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

impl OnnxDetector {
    /// Reads the descriptor, verifies the graph checksum and loads the graph.
    pub fn load(descriptor_path: &Path) -> Result<Self, DetectionError> {
        let setup = |e: String| DetectionError::Setup(e);
        let descriptor: DetectorDescriptor = read_descriptor(descriptor_path).map_err(|e| setup(e.to_string()))?;
        if descriptor.kind != "detector" {
            return Err(setup(format!(
                "{}: descriptor kind is `{}`, expected `detector`",
                descriptor_path.display(),
                descriptor.kind
            )));
        }
        if descriptor.input_size == 0 {
            return Err(setup(format!(
                "{}: input_size must be positive",
                descriptor_path.display()
            )));
        }
        let classes = descriptor
            .class_names
            .iter()
            .map(|n| Subtype::from_str(n).map_err(|e| setup(format!("{}: {e}", descriptor_path.display()))))
            .collect::<Result<Vec<_>, _>>()?;
        if classes.len() != Subtype::ALL.len() {
            log::warn!(
                "{}: detector has {} classes, expected 5",
                descriptor_path.display(),
                classes.len()
            );
        }
        let base: PathBuf = descriptor_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let graph = descriptor.graph.verify(&base).map_err(|e| setup(e.to_string()))?;
        let s = descriptor.input_size as usize;
        let model = load_graph(&graph, &[(f32::datum_type(), vec![1, 3, s, s])]).map_err(|e| setup(e.to_string()))?;
        Ok(Self {
            caps: DetectorCapabilities {
                name: format!("onnx:{}", descriptor.graph.graph.display()),
                input_size: Some((descriptor.input_size, descriptor.input_size)),
                classes,
            },
            descriptor,
            model,
        })
    }

    pub fn descriptor(&self) -> &DetectorDescriptor {
        &self.descriptor
    }

    fn class(&self, index: f32) -> Result<Subtype, String> {
        let i = index.round();
        if i < 0.0 || i as usize >= self.caps.classes.len() {
            return Err(format!(
                "class index {index} outside the {} known classes",
                self.caps.classes.len()
            ));
        }
        Ok(self.caps.classes[i as usize])
    }
}

impl DetectorBackend for OnnxDetector {
    fn capabilities(&self) -> &DetectorCapabilities {
        &self.caps
    }

    fn infer(&mut self, image: &CompositeImage) -> Result<Vec<RawDetection>, String> {
        let d = &self.descriptor;
        let lb = Letterbox::new(image.width(), image.height(), d.input_size, d.placement);
        let input = lb.tensor(image, d.padding, &d.normalization);
        let out = self.model.run(tvec!(input.into())).map_err(|e| format!("{e:#}"))?;
        let view = out[0].to_plain_array_view::<f32>().map_err(|e| format!("{e:#}"))?;
        let shape = view.shape().to_vec();
        let to_raw = |x0: f64, y0: f64, x1: f64, y1: f64, subtype, confidence| {
            let (ox0, oy0) = lb.inverse(x0, y0);
            let (ox1, oy1) = lb.inverse(x1, y1);
            RawDetection {
                x0: ox0,
                y0: oy0,
                x1: ox1,
                y1: oy1,
                subtype,
                confidence,
            }
        };
        match d.output {
            OutputLayout::PostNms => {
                if shape.len() != 3 || shape[0] != 1 || shape[2] != 6 {
                    return Err(format!("expected output [1, n, 6], got {shape:?}"));
                }
                (0..shape[1])
                    .map(|i| {
                        let r = |k: usize| f64::from(view[[0, i, k]]);
                        Ok(to_raw(r(0), r(1), r(2), r(3), self.class(view[[0, i, 5]])?, r(4)))
                    })
                    .collect()
            }
            OutputLayout::Yolov8Raw => {
                let nc = self.caps.classes.len();
                if shape.len() != 3 || shape[0] != 1 || shape[1] != 4 + nc {
                    return Err(format!("expected output [1, {}, anchors], got {shape:?}", 4 + nc));
                }
                let mut cands = Vec::new();
                for a in 0..shape[2] {
                    let (best, score) = (0..nc)
                        .map(|c| (c, view[[0, 4 + c, a]]))
                        .fold((0, f32::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
                    let score = f64::from(score);
                    if score < d.min_confidence {
                        continue;
                    }
                    let g = |k: usize| f64::from(view[[0, k, a]]);
                    let (cx, cy, w, h) = (g(0), g(1), g(2), g(3));
                    cands.push(to_raw(
                        cx - w / 2.0,
                        cy - h / 2.0,
                        cx + w / 2.0,
                        cy + h / 2.0,
                        self.caps.classes[best],
                        score,
                    ));
                }
                Ok(non_max_suppression(cands, d.nms_iou))
            }
        }
    }
}
