//! Synthetic head-CT fixture datasets: a bone ring around brain tissue with
//! bright elliptical lesions on some slices, written with masks, box
//! annotations and a manifest in the on-disk layout the loaders expect.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    write_annotations, write_mask, write_raster16, DatasetError, GroundTruthBox, Manifest, ManifestEntry, SliceFormat,
    Subtype,
};
use crate::imaging::{CtSlice, Rescale, SliceId};
use crate::prompt::seeded_rng;
use crate::raster::BinaryMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub patients: usize,
    pub slices_per_patient: usize,
    /// Square frame side in pixels.
    pub size: u32,
    pub seed: u64,
    pub brain_hu: f32,
    pub lesion_hu: f32,
    pub bone_hu: f32,
    /// Half-width of the uniform per-pixel noise, in HU.
    pub noise_hu: f32,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            patients: 3,
            slices_per_patient: 4,
            size: 64,
            seed: 0,
            brain_hu: 30.0,
            lesion_hu: 70.0,
            bone_hu: 1200.0,
            noise_hu: 3.0,
        }
    }
}

/// One generated slice with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSlice {
    pub slice: CtSlice,
    /// Empty on healthy slices.
    pub lesion: BinaryMask,
    pub subtype: Option<Subtype>,
}

impl SyntheticSlice {
    pub fn boxes(&self) -> Vec<GroundTruthBox> {
        match (self.lesion.bounding_box(), self.subtype) {
            (Some(bbox), Some(subtype)) => vec![GroundTruthBox {
                slice_id: self.slice.id().slice_id.clone(),
                subtype,
                bbox,
            }],
            _ => Vec::new(),
        }
    }
}

/// Generates every slice of `spec`. Slice `j` of each patient carries a
/// lesion when `j` is even, so every patient is positive and every patient
/// with two or more slices also has a healthy one.
pub fn generate(spec: &SyntheticSpec) -> Vec<SyntheticSlice> {
    let mut rng = seeded_rng(spec.seed);
    let s = spec.size as f64;
    let (c, outer) = ((s - 1.0) / 2.0, s * 0.45);
    let inner = outer - (s * 0.06).max(3.0);
    let mut out = Vec::with_capacity(spec.patients * spec.slices_per_patient);
    for p in 0..spec.patients {
        for j in 0..spec.slices_per_patient {
            let id = SliceId::new(format!("P{p:03}_S{j:03}"), format!("P{p:03}"), j as i64);
            let lesion_shape = (j % 2 == 0).then(|| {
                let (rx, ry) = (
                    rng.random_range(2.5..s * 0.1 + 3.0),
                    rng.random_range(2.5..s * 0.1 + 3.0),
                );
                // Keep a perturbed box (grown by up to 4 px) off the skull.
                let reach = inner - rx.max(ry) - 7.0;
                let ang = rng.random_range(0.0..std::f64::consts::TAU);
                let dist = rng.random_range(0.0..reach.max(0.0) + f64::EPSILON);
                (c + dist * ang.cos(), c + dist * ang.sin(), rx, ry)
            });
            let lesion = match lesion_shape {
                Some((lx, ly, rx, ry)) => BinaryMask::from_fn(spec.size, spec.size, |x, y| {
                    ((f64::from(x) - lx) / rx).powi(2) + ((f64::from(y) - ly) / ry).powi(2) <= 1.0
                }),
                None => BinaryMask::new(spec.size, spec.size),
            };
            let mut hu = Vec::with_capacity((spec.size * spec.size) as usize);
            for y in 0..spec.size {
                for x in 0..spec.size {
                    let d = ((f64::from(x) - c).powi(2) + (f64::from(y) - c).powi(2)).sqrt();
                    let noise = if spec.noise_hu > 0.0 {
                        rng.random_range(-spec.noise_hu..=spec.noise_hu)
                    } else {
                        0.0
                    };
                    let v = if d > outer {
                        -1000.0
                    } else if d > inner {
                        spec.bone_hu
                    } else if lesion.get(x, y) {
                        spec.lesion_hu + noise
                    } else {
                        spec.brain_hu + noise
                    };
                    hu.push(v.round());
                }
            }
            let slice = CtSlice::new(id, spec.size, spec.size, hu).expect("finite synthetic HU");
            let subtype = lesion_shape.map(|_| Subtype::ALL[rng.random_range(0..Subtype::ALL.len())]);
            out.push(SyntheticSlice { slice, lesion, subtype });
        }
    }
    out
}

/// Writes a generated dataset under `dir` and returns the manifest path.
///
/// Layout: `images/<id>.png` (+ `.json` sidecar), `masks/<id>.png`,
/// `annotations.csv`, `manifest.json`.
pub fn write_fixture(dir: &Path, spec: &SyntheticSpec) -> Result<PathBuf, DatasetError> {
    for sub in ["images", "masks"] {
        let d = dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| DatasetError::io(&d, e))?;
    }
    let rescale = Rescale::new(1.0, -1024.0).expect("valid rescale");
    let mut manifest = Manifest {
        annotations: Some("annotations.csv".into()),
        slices: Vec::new(),
    };
    let mut boxes = Vec::new();
    for s in generate(spec) {
        let id = s.slice.id().clone();
        let image = format!("images/{}.png", id.slice_id);
        let mask = format!("masks/{}.png", id.slice_id);
        write_raster16(&dir.join(&image), &s.slice, rescale)?;
        write_mask(&dir.join(&mask), &s.lesion)?;
        boxes.extend(s.boxes());
        manifest.slices.push(ManifestEntry {
            slice_id: id.slice_id,
            patient_id: id.patient_id,
            slice_index: id.slice_index,
            image,
            format: SliceFormat::Raster16,
            mask: Some(mask),
            brain_mask: None,
            label: None,
        });
    }
    let ann = dir.join("annotations.csv");
    let file = fs::File::create(&ann).map_err(|e| DatasetError::io(&ann, e))?;
    write_annotations(file, &boxes).map_err(|source| DatasetError::Csv { path: ann, source })?;
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| DatasetError::io(&path, e))?;
    Ok(path)
}
