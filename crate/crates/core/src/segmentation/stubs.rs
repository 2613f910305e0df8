use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{SegmenterBackend, SegmenterCapabilities};
use crate::dataset::{load_mask, DatasetError};
use crate::imaging::{CompositeImage, WindowName};
use crate::prompt::PromptSet;
use crate::raster::{label_components, BinaryMask, Connectivity};

/// Returns the prompt box filled. Accepts boxes only.
#[derive(Debug, Clone)]
pub struct FillBoxSegmenter {
    caps: SegmenterCapabilities,
}

impl FillBoxSegmenter {
    pub fn new() -> Self {
        Self {
            caps: SegmenterCapabilities {
                name: "fill-box".into(),
                accepts_boxes: true,
                accepts_points: false,
            },
        }
    }
}

impl Default for FillBoxSegmenter {
    fn default() -> Self {
        Self::new()
    }
}

impl SegmenterBackend for FillBoxSegmenter {
    fn capabilities(&self) -> &SegmenterCapabilities {
        &self.caps
    }

    fn segment(&mut self, image: &CompositeImage, prompt: &PromptSet) -> Result<BinaryMask, String> {
        let b = prompt.bbox.ok_or("fill-box needs a box")?;
        Ok(BinaryMask::from_box(image.width(), image.height(), &b))
    }
}

/// Intensity rule standing in for a learned segmenter.
///
/// Candidates are pixels with brain channel above `brain_min` and bone
/// channel below `bone_max`, restricted to the box when one is given. With
/// positive points only the 8-connected candidate components holding a
/// positive point are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSegmenter {
    pub brain_min: f32,
    pub bone_max: f32,
    #[serde(skip, default = "threshold_caps")]
    caps: SegmenterCapabilities,
}

fn threshold_caps() -> SegmenterCapabilities {
    SegmenterCapabilities {
        name: "threshold".into(),
        accepts_boxes: true,
        accepts_points: true,
    }
}

impl ThresholdSegmenter {
    pub fn new(brain_min: f32, bone_max: f32) -> Self {
        Self {
            brain_min,
            bone_max,
            caps: threshold_caps(),
        }
    }
}

impl Default for ThresholdSegmenter {
    fn default() -> Self {
        Self::new(0.625, 0.5)
    }
}

impl SegmenterBackend for ThresholdSegmenter {
    fn capabilities(&self) -> &SegmenterCapabilities {
        &self.caps
    }

    fn segment(&mut self, image: &CompositeImage, prompt: &PromptSet) -> Result<BinaryMask, String> {
        let (w, h) = (image.width(), image.height());
        let brain = image.channel(WindowName::Brain);
        let bone = image.channel(WindowName::Bone);
        let mut mask = BinaryMask::from_fn(w, h, |x, y| {
            let i = y as usize * w as usize + x as usize;
            brain[i] > self.brain_min && bone[i] < self.bone_max
        });
        if let Some(b) = prompt.bbox {
            mask.intersect_with(&BinaryMask::from_box(w, h, &b));
        }
        if prompt.positive_points.is_empty() {
            return Ok(mask);
        }
        let comps = label_components(&mask, Connectivity::Eight);
        let mut keep = vec![false; comps.count()];
        for p in &prompt.positive_points {
            if p.x < w && p.y < h {
                if let Some(id) = comps.labels[p.y as usize * w as usize + p.x as usize] {
                    keep[id as usize] = true;
                }
            }
        }
        Ok(BinaryMask::from_bits(
            w,
            h,
            comps
                .labels
                .iter()
                .map(|l| l.is_some_and(|id| keep[id as usize]))
                .collect(),
        )
        .expect("labels cover the frame"))
    }
}

/// Answers with the slice's reference mask, cut to the prompt box when one
/// is given. Slices without a reference get an empty mask.
#[derive(Debug, Clone)]
pub struct MaskOracleSegmenter {
    caps: SegmenterCapabilities,
    masks: BTreeMap<String, BinaryMask>,
}

impl MaskOracleSegmenter {
    pub fn new(masks: BTreeMap<String, BinaryMask>) -> Self {
        Self {
            caps: SegmenterCapabilities {
                name: "oracle".into(),
                accepts_boxes: true,
                accepts_points: true,
            },
            masks,
        }
    }
}

impl SegmenterBackend for MaskOracleSegmenter {
    fn capabilities(&self) -> &SegmenterCapabilities {
        &self.caps
    }

    fn segment(&mut self, image: &CompositeImage, prompt: &PromptSet) -> Result<BinaryMask, String> {
        let (w, h) = (image.width(), image.height());
        let Some(reference) = self.masks.get(&image.id().slice_id) else {
            return Ok(BinaryMask::new(w, h));
        };
        if reference.dims() != (w, h) {
            return Err(format!(
                "reference mask is {:?}, image is {:?}",
                reference.dims(),
                (w, h)
            ));
        }
        let mut mask = reference.clone();
        if let Some(b) = prompt.bbox {
            mask.intersect_with(&BinaryMask::from_box(w, h, &b));
        }
        Ok(mask)
    }
}

/// Wraps a backend and logs every prompt it receives.
pub struct RecordingSegmenter {
    inner: Box<dyn SegmenterBackend>,
    log: Arc<Mutex<Vec<PromptSet>>>,
}

impl RecordingSegmenter {
    pub fn new(inner: Box<dyn SegmenterBackend>) -> Self {
        Self {
            inner,
            log: Arc::default(),
        }
    }

    pub fn log(&self) -> Arc<Mutex<Vec<PromptSet>>> {
        Arc::clone(&self.log)
    }
}

impl SegmenterBackend for RecordingSegmenter {
    fn capabilities(&self) -> &SegmenterCapabilities {
        self.inner.capabilities()
    }

    fn segment(&mut self, image: &CompositeImage, prompt: &PromptSet) -> Result<BinaryMask, String> {
        self.log.lock().map_err(|e| e.to_string())?.push(prompt.clone());
        self.inner.segment(image, prompt)
    }
}

/// `{"masks": {"<slice_id>": "path.png"}}`, paths relative to the file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaskReplayFile {
    pub masks: BTreeMap<String, PathBuf>,
}

/// Answers every prompt on a slice with a precomputed mask; slices not in
/// the file get an empty mask.
#[derive(Debug, Clone)]
pub struct ReplaySegmenter {
    caps: SegmenterCapabilities,
    root: PathBuf,
    masks: BTreeMap<String, PathBuf>,
}

impl ReplaySegmenter {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        let file: MaskReplayFile = serde_json::from_str(&text).map_err(|e| DatasetError::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let missing: Vec<PathBuf> = file
            .masks
            .values()
            .map(|p| root.join(p))
            .filter(|p| !p.is_file())
            .collect();
        if !missing.is_empty() {
            return Err(DatasetError::DanglingPaths(missing));
        }
        Ok(Self {
            caps: SegmenterCapabilities {
                name: "replay".into(),
                accepts_boxes: true,
                accepts_points: true,
            },
            root,
            masks: file.masks,
        })
    }
}

impl SegmenterBackend for ReplaySegmenter {
    fn capabilities(&self) -> &SegmenterCapabilities {
        &self.caps
    }

    fn segment(&mut self, image: &CompositeImage, _prompt: &PromptSet) -> Result<BinaryMask, String> {
        let dims = (image.width(), image.height());
        match self.masks.get(&image.id().slice_id) {
            Some(p) => load_mask(&self.root.join(p), Some(dims)).map_err(|e| e.to_string()),
            None => Ok(BinaryMask::new(dims.0, dims.1)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::write_mask;
    use crate::imaging::SliceId;
    use crate::raster::{PixelBox, Point};

    fn image() -> CompositeImage {
        // Two bright blobs on a dark row-major 10×4 frame.
        let brain: Vec<f32> = (0..40)
            .map(|i| if matches!(i % 10, 1 | 2 | 6 | 7) { 0.9 } else { 0.2 })
            .collect();
        let bone = vec![0.3; 40];
        CompositeImage::from_channels(SliceId::new("t", "p", 0), 10, 4, [brain, vec![0.0; 40], bone]).unwrap()
    }

    #[test]
    fn threshold_keeps_prompted_component() {
        let mut t = ThresholdSegmenter::default();
        let p = PromptSet {
            bbox: None,
            positive_points: vec![Point::new(6, 1)],
            negative_points: vec![],
        };
        let m = t.segment(&image(), &p).unwrap();
        assert_eq!(m, BinaryMask::from_box(10, 4, &PixelBox::new(6, 0, 8, 4).unwrap()));
    }

    #[test]
    fn threshold_box_only_clips_to_box() {
        let mut t = ThresholdSegmenter::default();
        let m = t
            .segment(&image(), &PromptSet::box_only(PixelBox::new(0, 0, 7, 2).unwrap()))
            .unwrap();
        assert_eq!(m.count(), 6);
    }

    #[test]
    fn oracle_cuts_reference_to_box() {
        let reference = BinaryMask::from_box(10, 4, &PixelBox::new(1, 0, 8, 4).unwrap());
        let mut o = MaskOracleSegmenter::new(BTreeMap::from([("t".to_string(), reference.clone())]));
        let points = PromptSet {
            bbox: None,
            positive_points: vec![Point::new(2, 2)],
            negative_points: vec![],
        };
        assert_eq!(o.segment(&image(), &points).unwrap(), reference);
        let m = o
            .segment(&image(), &PromptSet::box_only(PixelBox::new(0, 0, 3, 1).unwrap()))
            .unwrap();
        assert_eq!(m.count(), 2);
        let other =
            CompositeImage::from_channels(SliceId::new("u", "p", 0), 10, 4, image().channels().clone()).unwrap();
        assert!(o.segment(&other, &points).unwrap().is_empty());
    }

    #[test]
    fn replay_reads_masks_and_defaults_to_empty() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_box(10, 4, &PixelBox::new(1, 1, 3, 3).unwrap());
        write_mask(&dir.path().join("t.png"), &m).unwrap();
        std::fs::write(dir.path().join("r.json"), r#"{"masks": {"t": "t.png"}}"#).unwrap();
        let mut r = ReplaySegmenter::load(&dir.path().join("r.json")).unwrap();
        let p = PromptSet::box_only(PixelBox::new(0, 0, 1, 1).unwrap());
        assert_eq!(r.segment(&image(), &p).unwrap(), m);

        let other =
            CompositeImage::from_channels(SliceId::new("u", "p", 0), 10, 4, image().channels().clone()).unwrap();
        assert!(r.segment(&other, &p).unwrap().is_empty());
    }

    #[test]
    fn replay_rejects_dangling_paths() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("r.json"), r#"{"masks": {"t": "nope.png"}}"#).unwrap();
        assert!(matches!(
            ReplaySegmenter::load(&dir.path().join("r.json")),
            Err(DatasetError::DanglingPaths(_))
        ));
    }
}
