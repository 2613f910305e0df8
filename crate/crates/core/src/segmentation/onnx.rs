use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tract_onnx::prelude::*;

use super::{SegmenterBackend, SegmenterCapabilities};
use crate::imaging::CompositeImage;
use crate::interchange::{
    load_graph, read_descriptor, GraphRef, InterchangeError, Letterbox, Normalization, Padding, Placement, Runnable,
};
use crate::prompt::PromptSet;
use crate::raster::BinaryMask;

/// Resolution of the decoder's mask output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskSpace {
    /// Already at the original image size (the decoder consumed `orig_im_size`).
    #[default]
    Original,
    /// At the square network input; mapped back by nearest neighbour.
    Input,
}

fn default_max_points() -> usize {
    8
}

fn default_mask_input_size() -> u32 {
    256
}

fn default_seg_padding() -> Padding {
    Padding {
        value: 0.0,
        normalized: true,
    }
}

fn default_top_left() -> Placement {
    Placement::TopLeft
}

/// JSON sidecar of an exported image-encoder / prompt-decoder pair.
///
/// The decoder takes `image_embeddings`, `point_coords [1, P, 2]`,
/// `point_labels [1, P]`, `mask_input [1, 1, M, M]`, `has_mask_input [1]`
/// and `orig_im_size [2]`, in that order. Points are labelled 1 (positive)
/// and 0 (negative); a box is two points labelled 2 and 3; unused slots hold
/// `(0, 0)` labelled -1. Mask logits above `mask_threshold` are foreground.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmenterDescriptor {
    pub kind: String,
    pub encoder: GraphRef,
    pub decoder: GraphRef,
    pub input_size: u32,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default = "default_seg_padding")]
    pub padding: Padding,
    #[serde(default = "default_top_left")]
    pub placement: Placement,
    /// Shape of the encoder output, e.g. `[1, 256, 64, 64]`.
    pub embedding_shape: Vec<usize>,
    /// `P`: point slots per decoder call.
    #[serde(default = "default_max_points")]
    pub max_points: usize,
    #[serde(default = "default_mask_input_size")]
    pub mask_input_size: u32,
    #[serde(default)]
    pub mask_space: MaskSpace,
    #[serde(default)]
    pub mask_threshold: f32,
}

/// Point coordinates and labels in decoder input space, padded to `slots`.
///
/// Points are placed at pixel centres; box corners at the box edges. A
/// prompt without a box keeps at least one padding slot.
pub fn encode_prompt(prompt: &PromptSet, lb: &Letterbox, slots: usize) -> Result<(Vec<f32>, Vec<f32>), String> {
    let mut coords = Vec::with_capacity(2 * slots);
    let mut labels = Vec::with_capacity(slots);
    let mut push = |(x, y): (f64, f64), label: f32| {
        coords.extend([x as f32, y as f32]);
        labels.push(label);
    };
    for p in &prompt.positive_points {
        push(lb.forward(f64::from(p.x) + 0.5, f64::from(p.y) + 0.5), 1.0);
    }
    for p in &prompt.negative_points {
        push(lb.forward(f64::from(p.x) + 0.5, f64::from(p.y) + 0.5), 0.0);
    }
    if let Some(b) = prompt.bbox {
        push(lb.forward(f64::from(b.x0), f64::from(b.y0)), 2.0);
        push(lb.forward(f64::from(b.x1), f64::from(b.y1)), 3.0);
    }
    // Without a box SAM expects at least one padding point.
    let needed = labels.len() + usize::from(prompt.bbox.is_none());
    if needed > slots {
        return Err(format!(
            "{} prompt points exceed the decoder's {slots} slots",
            labels.len()
        ));
    }
    while labels.len() < slots {
        coords.extend([0.0, 0.0]);
        labels.push(-1.0);
    }
    Ok((coords, labels))
}

/// Encoder/decoder pair run through tract. The image embedding of the last
/// slice is cached, so the ensemble members of one slice share one encoder
/// pass.
pub struct OnnxSegmenter {
    caps: SegmenterCapabilities,
    descriptor: SegmenterDescriptor,
    encoder: Runnable,
    decoder: Runnable,
    cache: Option<((String, u32, u32), TValue)>,
}

impl std::fmt::Debug for OnnxSegmenter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnnxSegmenter")
            .field("descriptor", &self.descriptor)
            .finish()
    }
}

impl OnnxSegmenter {
    pub fn load(descriptor_path: &Path) -> Result<Self, InterchangeError> {
        let invalid = |message: String| InterchangeError::Invalid {
            path: descriptor_path.to_path_buf(),
            message,
        };
        let d: SegmenterDescriptor = read_descriptor(descriptor_path)?;
        if d.kind != "segmenter" {
            return Err(invalid(format!(
                "descriptor kind is `{}`, expected `segmenter`",
                d.kind
            )));
        }
        if d.input_size == 0 || d.max_points < 2 || d.embedding_shape.is_empty() {
            return Err(invalid(
                "input_size, max_points >= 2 and embedding_shape are required".into(),
            ));
        }
        let base: PathBuf = descriptor_path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let enc_path = d.encoder.verify(&base)?;
        let dec_path = d.decoder.verify(&base)?;
        let s = d.input_size as usize;
        let m = d.mask_input_size as usize;
        let f = f32::datum_type();
        let encoder = load_graph(&enc_path, &[(f, vec![1, 3, s, s])])?;
        let decoder = load_graph(
            &dec_path,
            &[
                (f, d.embedding_shape.clone()),
                (f, vec![1, d.max_points, 2]),
                (f, vec![1, d.max_points]),
                (f, vec![1, 1, m, m]),
                (f, vec![1]),
                (f, vec![2]),
            ],
        )?;
        Ok(Self {
            caps: SegmenterCapabilities {
                name: format!("onnx:{}", d.decoder.graph.display()),
                accepts_boxes: true,
                accepts_points: true,
            },
            descriptor: d,
            encoder,
            decoder,
            cache: None,
        })
    }

    fn embedding(&mut self, image: &CompositeImage, lb: &Letterbox) -> Result<TValue, String> {
        let key = (image.id().slice_id.clone(), image.width(), image.height());
        if let Some((k, v)) = &self.cache {
            if *k == key {
                return Ok(v.clone());
            }
        }
        let d = &self.descriptor;
        let input = lb.tensor(image, d.padding, &d.normalization);
        let mut out = self
            .encoder
            .run(tvec!(input.into()))
            .map_err(|e| format!("encoder: {e:#}"))?;
        let emb = out.swap_remove(0);
        self.cache = Some((key, emb.clone()));
        Ok(emb)
    }
}

impl SegmenterBackend for OnnxSegmenter {
    fn capabilities(&self) -> &SegmenterCapabilities {
        &self.caps
    }

    fn segment(&mut self, image: &CompositeImage, prompt: &PromptSet) -> Result<BinaryMask, String> {
        let d = self.descriptor.clone();
        let (w, h) = (image.width(), image.height());
        let lb = Letterbox::new(w, h, d.input_size, d.placement);
        let emb = self.embedding(image, &lb)?;
        let (coords, labels) = encode_prompt(prompt, &lb, d.max_points)?;
        let p = d.max_points;
        let m = d.mask_input_size as usize;
        let shaped = |shape: &[usize], data: Vec<f32>| -> Result<TValue, String> {
            Ok(Tensor::from_shape(shape, &data).map_err(|e| format!("{e:#}"))?.into())
        };
        let inputs = tvec!(
            emb,
            shaped(&[1, p, 2], coords)?,
            shaped(&[1, p], labels)?,
            shaped(&[1, 1, m, m], vec![0.0; m * m])?,
            shaped(&[1], vec![0.0])?,
            shaped(&[2], vec![h as f32, w as f32])?,
        );
        let out = self.decoder.run(inputs).map_err(|e| format!("decoder: {e:#}"))?;
        let view = out[0].to_plain_array_view::<f32>().map_err(|e| format!("{e:#}"))?;
        let shape = view.shape().to_vec();
        if shape.len() != 4 || shape[0] != 1 || shape[1] == 0 {
            return Err(format!("expected masks [1, k, h, w], got {shape:?}"));
        }
        let t = d.mask_threshold;
        match d.mask_space {
            MaskSpace::Original => {
                if (shape[2], shape[3]) != (h as usize, w as usize) {
                    return Err(format!("mask is {}x{}, image is {w}x{h}", shape[3], shape[2]));
                }
                Ok(BinaryMask::from_fn(w, h, |x, y| {
                    view[[0, 0, y as usize, x as usize]] > t
                }))
            }
            MaskSpace::Input => {
                let s = d.input_size as usize;
                if (shape[2], shape[3]) != (s, s) {
                    return Err(format!("mask is {}x{}, network input is {s}x{s}", shape[3], shape[2]));
                }
                Ok(BinaryMask::from_fn(w, h, |x, y| {
                    let (xi, yi) = lb.nearest_input_pixel(x, y);
                    view[[0, 0, yi as usize, xi as usize]] > t
                }))
            }
        }
    }
}
