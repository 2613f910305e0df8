use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::annotations::{load_annotations, GroundTruthBox, RowRejection};
use super::mask_io::load_mask;
use super::slice_io::{load_ct_slice, sidecar_path, SliceFormat};
use super::DatasetError;
use crate::imaging::{CtSlice, SliceId};
use crate::raster::BinaryMask;

/// Dataset manifest. Paths are relative to the manifest's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Canonical annotation CSV, if any slices carry boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<String>,
    pub slices: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub slice_id: String,
    pub patient_id: String,
    pub slice_index: i64,
    pub image: String,
    #[serde(default)]
    pub format: SliceFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    /// Externally computed brain mask; replaces the built-in skull stripping.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brain_mask: Option<String>,
    /// Explicit slice-level ICH label. When absent it is derived from the mask or boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, DatasetError> {
        let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceRecord {
    pub slice_id: String,
    pub patient_id: String,
    pub slice_index: i64,
    pub image: String,
    pub format: SliceFormat,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brain_mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<bool>,
    #[serde(default)]
    pub boxes: Vec<GroundTruthBox>,
}

impl SliceRecord {
    pub fn id(&self) -> SliceId {
        SliceId::new(self.slice_id.clone(), self.patient_id.clone(), self.slice_index)
    }

    /// Slice-level ground truth: the explicit label, else a nonempty mask,
    /// else the presence of annotated boxes.
    pub fn is_positive(&self, mask: Option<&BinaryMask>) -> bool {
        self.label
            .or_else(|| mask.map(|m| !m.is_empty()))
            .unwrap_or(!self.boxes.is_empty())
    }
}

/// Slice records ordered by `(patient_id, slice_index, slice_id)` plus the patient grouping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    #[serde(skip)]
    root: PathBuf,
    records: Vec<SliceRecord>,
    patients: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    rejected_annotations: Vec<RowRejection>,
    #[serde(default)]
    issues: Vec<String>,
}

/// Resolves and validates a manifest against `root`.
pub fn build_index(root: &Path, manifest: &Manifest) -> Result<DatasetIndex, DatasetError> {
    let mut seen = HashMap::new();
    let mut dups = BTreeSet::new();
    for e in &manifest.slices {
        if seen.insert(e.slice_id.as_str(), ()).is_some() {
            dups.insert(e.slice_id.clone());
        }
    }
    if !dups.is_empty() {
        return Err(DatasetError::DuplicateSliceIds(dups.into_iter().collect()));
    }

    let mut missing = Vec::new();
    let mut check = |rel: &str| {
        let p = root.join(rel);
        if !p.is_file() {
            missing.push(p);
        }
    };
    for e in &manifest.slices {
        check(&e.image);
        if e.format == SliceFormat::Raster16 {
            check(&sidecar_path(Path::new(&e.image)).to_string_lossy());
        }
        e.mask.iter().for_each(|m| check(m));
        e.brain_mask.iter().for_each(|m| check(m));
    }
    manifest.annotations.iter().for_each(|a| check(a));
    if !missing.is_empty() {
        return Err(DatasetError::DanglingPaths(missing));
    }

    let (mut by_slice, rejected_annotations) = match &manifest.annotations {
        Some(rel) => {
            let ann = load_annotations(&root.join(rel))?;
            let mut by_slice: HashMap<String, Vec<GroundTruthBox>> = HashMap::new();
            for b in ann.boxes {
                by_slice.entry(b.slice_id.clone()).or_default().push(b);
            }
            (by_slice, ann.rejected)
        }
        None => (HashMap::new(), Vec::new()),
    };
    let unknown: BTreeSet<String> = by_slice
        .keys()
        .filter(|k| !seen.contains_key(k.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(DatasetError::UnknownAnnotatedSlices(unknown.into_iter().collect()));
    }

    let mut issues = Vec::new();
    let mut records = Vec::with_capacity(manifest.slices.len());
    for e in &manifest.slices {
        let (width, height) = image_dims(&root.join(&e.image), &e.format)?;
        let mut boxes = Vec::new();
        for b in by_slice.remove(&e.slice_id).unwrap_or_default() {
            if b.bbox.fits_within(width, height) {
                boxes.push(b);
            } else {
                issues.push(format!(
                    "slice {}: {} box ({},{},{},{}) exceeds {}x{}; dropped",
                    e.slice_id, b.subtype, b.bbox.x0, b.bbox.y0, b.bbox.x1, b.bbox.y1, width, height
                ));
            }
        }
        records.push(SliceRecord {
            slice_id: e.slice_id.clone(),
            patient_id: e.patient_id.clone(),
            slice_index: e.slice_index,
            image: e.image.clone(),
            format: e.format,
            width,
            height,
            mask: e.mask.clone(),
            brain_mask: e.brain_mask.clone(),
            label: e.label,
            boxes,
        });
    }
    records
        .sort_by(|a, b| (&a.patient_id, a.slice_index, &a.slice_id).cmp(&(&b.patient_id, b.slice_index, &b.slice_id)));
    let mut patients: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in &records {
        patients
            .entry(r.patient_id.clone())
            .or_default()
            .push(r.slice_id.clone());
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        records,
        patients,
        rejected_annotations,
        issues,
    })
}

fn image_dims(path: &Path, format: &SliceFormat) -> Result<(u32, u32), DatasetError> {
    match format {
        SliceFormat::Raster16 => image::image_dimensions(path).map_err(|source| DatasetError::Image {
            path: path.to_path_buf(),
            source,
        }),
        SliceFormat::Nifti { .. } => {
            let header = nifti::NiftiHeader::from_file(path).map_err(|e| DatasetError::Nifti {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            Ok((u32::from(header.dim[1]), u32::from(header.dim[2])))
        }
    }
}

impl DatasetIndex {
    /// Loads the manifest at `path` and indexes it relative to its directory.
    pub fn from_manifest(path: &Path) -> Result<Self, DatasetError> {
        let manifest = Manifest::load(path)?;
        let root = path.parent().unwrap_or(Path::new("."));
        build_index(root, &manifest)
    }

    /// Re-attaches a deserialized index to its data directory.
    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn records(&self) -> &[SliceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn record(&self, slice_id: &str) -> Option<&SliceRecord> {
        self.records.iter().find(|r| r.slice_id == slice_id)
    }

    /// Patient id → slice ids, both sorted.
    pub fn patients(&self) -> &BTreeMap<String, Vec<String>> {
        &self.patients
    }

    pub fn rejected_annotations(&self) -> &[RowRejection] {
        &self.rejected_annotations
    }

    pub fn issues(&self) -> &[String] {
        &self.issues
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Loads the slice image and stamps it with the record's identity.
    pub fn load_slice(&self, record: &SliceRecord) -> Result<CtSlice, DatasetError> {
        let path = self.resolve(&record.image);
        let slice = load_ct_slice(&path, &record.format)?;
        if (slice.width(), slice.height()) != (record.width, record.height) {
            return Err(DatasetError::DimensionMismatch {
                path,
                expected_width: record.width,
                expected_height: record.height,
                width: slice.width(),
                height: slice.height(),
            });
        }
        Ok(slice.with_id(record.id()))
    }

    pub fn load_mask(&self, record: &SliceRecord) -> Result<Option<BinaryMask>, DatasetError> {
        record
            .mask
            .as_ref()
            .map(|m| load_mask(&self.resolve(m), Some((record.width, record.height))))
            .transpose()
    }

    pub fn load_brain_mask(&self, record: &SliceRecord) -> Result<Option<BinaryMask>, DatasetError> {
        record
            .brain_mask
            .as_ref()
            .map(|m| load_mask(&self.resolve(m), Some((record.width, record.height))))
            .transpose()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("index serializes")
    }
}
