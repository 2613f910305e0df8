//! Hounsfield-unit windowing and the three-channel composite image.
//!
//! A window maps the HU interval `[level - width/2, level + width/2]` onto
//! `[0, 1]` and clamps everything outside it. The composite stacks the
//! brain, subdural and bone windows, in that order, as channels 0, 1, 2.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ImagingError {
    #[error("slice {slice_id}: non-finite HU value at pixel (x={x}, y={y})")]
    NonFiniteHu { slice_id: String, x: u32, y: u32 },
    #[error("slice {slice_id}: expected {expected} pixels for {width}x{height}, got {actual}")]
    PixelCount {
        slice_id: String,
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("slice {slice_id}: dimensions must be at least 1x1, got {width}x{height}")]
    EmptySlice { slice_id: String, width: u32, height: u32 },
    #[error("window {name}: width must be finite and > 0, got {width}")]
    InvalidWidth { name: WindowName, width: f64 },
    #[error("window {name}: level must be finite, got {level}")]
    InvalidLevel { name: WindowName, level: f64 },
    #[error("window {0} given more than once")]
    DuplicateWindow(WindowName),
    #[error("window {0} missing")]
    MissingWindow(WindowName),
    #[error("invalid rescale: slope {slope}, intercept {intercept}")]
    InvalidRescale { slope: f64, intercept: f64 },
}

/// Identity of a slice within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceId {
    pub slice_id: String,
    pub patient_id: String,
    pub slice_index: i64,
}

impl SliceId {
    pub fn new(slice_id: impl Into<String>, patient_id: impl Into<String>, slice_index: i64) -> Self {
        Self {
            slice_id: slice_id.into(),
            patient_id: patient_id.into(),
            slice_index,
        }
    }
}

/// Linear map from stored pixel values to HU: `hu = stored * slope + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub slope: f64,
    pub intercept: f64,
}

impl Default for Rescale {
    fn default() -> Self {
        Self {
            slope: 1.0,
            intercept: 0.0,
        }
    }
}

impl Rescale {
    pub fn new(slope: f64, intercept: f64) -> Result<Self, ImagingError> {
        if !slope.is_finite() || slope == 0.0 || !intercept.is_finite() {
            return Err(ImagingError::InvalidRescale { slope, intercept });
        }
        Ok(Self { slope, intercept })
    }

    #[inline]
    pub fn apply(&self, stored: f64) -> f64 {
        stored * self.slope + self.intercept
    }
}

/// A single 2D CT slice in Hounsfield units.
#[derive(Debug, Clone, PartialEq)]
pub struct CtSlice {
    id: SliceId,
    width: u32,
    height: u32,
    hu: Vec<f32>,
    pixel_spacing_mm: Option<(f64, f64)>,
}

impl CtSlice {
    /// Validates dimensions and finiteness of every HU value.
    pub fn new(id: SliceId, width: u32, height: u32, hu: Vec<f32>) -> Result<Self, ImagingError> {
        if width == 0 || height == 0 {
            return Err(ImagingError::EmptySlice {
                slice_id: id.slice_id,
                width,
                height,
            });
        }
        let expected = width as usize * height as usize;
        if hu.len() != expected {
            return Err(ImagingError::PixelCount {
                slice_id: id.slice_id,
                width,
                height,
                expected,
                actual: hu.len(),
            });
        }
        if let Some(i) = hu.iter().position(|v| !v.is_finite()) {
            return Err(ImagingError::NonFiniteHu {
                slice_id: id.slice_id,
                x: (i % width as usize) as u32,
                y: (i / width as usize) as u32,
            });
        }
        Ok(Self {
            id,
            width,
            height,
            hu,
            pixel_spacing_mm: None,
        })
    }

    /// Builds a slice from raw stored values, applying `rescale` first.
    pub fn from_stored(
        id: SliceId,
        width: u32,
        height: u32,
        stored: impl IntoIterator<Item = f64>,
        rescale: Rescale,
    ) -> Result<Self, ImagingError> {
        let hu = stored.into_iter().map(|v| rescale.apply(v) as f32).collect();
        Self::new(id, width, height, hu)
    }

    pub fn filled(id: SliceId, width: u32, height: u32, hu: f32) -> Result<Self, ImagingError> {
        Self::new(id, width, height, vec![hu; width as usize * height as usize])
    }

    pub fn with_pixel_spacing(mut self, spacing: Option<(f64, f64)>) -> Self {
        self.pixel_spacing_mm = spacing.filter(|(a, b)| *a > 0.0 && *b > 0.0);
        self
    }

    pub fn id(&self) -> &SliceId {
        &self.id
    }

    pub fn with_id(mut self, id: SliceId) -> Self {
        self.id = id;
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_spacing_mm(&self) -> Option<(f64, f64)> {
        self.pixel_spacing_mm
    }

    pub fn hu(&self) -> &[f32] {
        &self.hu
    }

    #[inline]
    pub fn hu_at(&self, x: u32, y: u32) -> f32 {
        self.hu[y as usize * self.width as usize + x as usize]
    }

    /// Copy with every pixel passed through `f(x, y, hu)`. The result must stay finite.
    pub fn map_pixels(&self, mut f: impl FnMut(u32, u32, f32) -> f32) -> CtSlice {
        let w = self.width as usize;
        let hu = self
            .hu
            .iter()
            .enumerate()
            .map(|(i, &v)| f((i % w) as u32, (i / w) as u32, v))
            .collect();
        CtSlice {
            id: self.id.clone(),
            width: self.width,
            height: self.height,
            hu,
            pixel_spacing_mm: self.pixel_spacing_mm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowName {
    Brain,
    Subdural,
    Bone,
}

impl WindowName {
    pub const ALL: [WindowName; 3] = [WindowName::Brain, WindowName::Subdural, WindowName::Bone];

    /// Channel position in the composite.
    pub fn channel(self) -> usize {
        match self {
            WindowName::Brain => 0,
            WindowName::Subdural => 1,
            WindowName::Bone => 2,
        }
    }
}

impl fmt::Display for WindowName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowName::Brain => "brain",
            WindowName::Subdural => "subdural",
            WindowName::Bone => "bone",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub name: WindowName,
    pub level: f64,
    pub width: f64,
}

impl WindowSpec {
    pub fn new(name: WindowName, level: f64, width: f64) -> Result<Self, ImagingError> {
        let spec = Self { name, level, width };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ImagingError> {
        if !self.level.is_finite() {
            return Err(ImagingError::InvalidLevel {
                name: self.name,
                level: self.level,
            });
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return Err(ImagingError::InvalidWidth {
                name: self.name,
                width: self.width,
            });
        }
        Ok(())
    }

    /// Radiology defaults: brain 40/80, subdural 80/200, bone 600/2800.
    pub fn default_for(name: WindowName) -> Self {
        let (level, width) = match name {
            WindowName::Brain => (40.0, 80.0),
            WindowName::Subdural => (80.0, 200.0),
            WindowName::Bone => (600.0, 2800.0),
        };
        Self { name, level, width }
    }

    pub fn floor(&self) -> f64 {
        self.level - self.width / 2.0
    }

    /// `clamp((hu - floor) / width, 0, 1)`.
    #[inline]
    pub fn map(&self, hu: f64) -> f64 {
        ((hu - self.floor()) / self.width).clamp(0.0, 1.0)
    }
}

/// One spec per window name, held in canonical channel order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSet([WindowSpec; 3]);

impl Default for WindowSet {
    fn default() -> Self {
        Self(WindowName::ALL.map(WindowSpec::default_for))
    }
}

impl WindowSet {
    /// Accepts the specs in any order; rejects duplicates, gaps and invalid widths.
    pub fn new(specs: &[WindowSpec]) -> Result<Self, ImagingError> {
        let mut slots: [Option<WindowSpec>; 3] = [None; 3];
        for spec in specs {
            spec.validate()?;
            let slot = &mut slots[spec.name.channel()];
            if slot.is_some() {
                return Err(ImagingError::DuplicateWindow(spec.name));
            }
            *slot = Some(*spec);
        }
        let mut out = [WindowSpec::default_for(WindowName::Brain); 3];
        for name in WindowName::ALL {
            out[name.channel()] = slots[name.channel()].ok_or(ImagingError::MissingWindow(name))?;
        }
        Ok(Self(out))
    }

    pub fn get(&self, name: WindowName) -> &WindowSpec {
        &self.0[name.channel()]
    }

    pub fn specs(&self) -> &[WindowSpec; 3] {
        &self.0
    }
}

/// Windowed `[0, 1]` raster of the slice, row-major, same dimensions.
///
/// `CtSlice` guarantees finite HU on construction, so this cannot fail.
pub fn apply_window(slice: &CtSlice, spec: &WindowSpec) -> Vec<f32> {
    slice.hu().iter().map(|&hu| spec.map(f64::from(hu)) as f32).collect()
}

/// Three-channel `[0, 1]` image: 0 = brain, 1 = subdural, 2 = bone.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeImage {
    id: SliceId,
    width: u32,
    height: u32,
    channels: [Vec<f32>; 3],
}

impl CompositeImage {
    /// Builds a composite from raw channel data. Values are clamped into `[0, 1]`;
    /// `None` on a length mismatch or non-finite value.
    pub fn from_channels(id: SliceId, width: u32, height: u32, channels: [Vec<f32>; 3]) -> Option<Self> {
        let n = width as usize * height as usize;
        if width == 0 || height == 0 || channels.iter().any(|c| c.len() != n) {
            return None;
        }
        if channels.iter().flatten().any(|v| !v.is_finite()) {
            return None;
        }
        let channels = channels.map(|c| c.into_iter().map(|v| v.clamp(0.0, 1.0)).collect());
        Some(Self {
            id,
            width,
            height,
            channels,
        })
    }

    pub fn id(&self) -> &SliceId {
        &self.id
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channel(&self, name: WindowName) -> &[f32] {
        &self.channels[name.channel()]
    }

    pub fn channels(&self) -> &[Vec<f32>; 3] {
        &self.channels
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [f32; 3] {
        let i = y as usize * self.width as usize + x as usize;
        [self.channels[0][i], self.channels[1][i], self.channels[2][i]]
    }
}

/// Applies each window of `windows` and stacks the results in canonical order.
pub fn make_composite(slice: &CtSlice, windows: &WindowSet) -> CompositeImage {
    CompositeImage {
        id: slice.id().clone(),
        width: slice.width(),
        height: slice.height(),
        channels: windows.specs().map(|spec| apply_window(slice, &spec)),
    }
}

/// Like [`make_composite`] but takes an unordered spec list and validates it.
pub fn make_composite_from_specs(slice: &CtSlice, specs: &[WindowSpec]) -> Result<CompositeImage, ImagingError> {
    Ok(make_composite(slice, &WindowSet::new(specs)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn sid() -> SliceId {
        SliceId::new("s0", "p0", 0)
    }

    fn one(hu: f32) -> CtSlice {
        CtSlice::filled(sid(), 1, 1, hu).unwrap()
    }

    #[test]
    fn window_midpoint_and_endpoints() {
        let spec = WindowSpec::new(WindowName::Subdural, 80.0, 200.0).unwrap();
        assert_eq!(apply_window(&one(80.0), &spec), vec![0.5]);
        assert_eq!(apply_window(&one(-20.0), &spec), vec![0.0]);
        assert_eq!(apply_window(&one(180.0), &spec), vec![1.0]);
    }

    #[test]
    fn brain_window_hand_values() {
        let brain = WindowSpec::default_for(WindowName::Brain);
        assert_eq!(apply_window(&one(0.0), &brain), vec![0.0]);
        assert_eq!(apply_window(&one(60.0), &brain), vec![0.75]);
    }

    #[test]
    fn composite_of_constant_slice() {
        // brain (40-0)/80, subdural (40+20)/200, bone (40+800)/2800
        let s = CtSlice::filled(sid(), 3, 2, 40.0).unwrap();
        let c = make_composite(&s, &WindowSet::default());
        assert_eq!((c.width(), c.height()), (3, 2));
        for v in c.channel(WindowName::Brain) {
            assert_abs_diff_eq!(*v, 0.5);
        }
        for v in c.channel(WindowName::Subdural) {
            assert_abs_diff_eq!(*v, 0.3, epsilon = 1e-6);
        }
        for v in c.channel(WindowName::Bone) {
            assert_abs_diff_eq!(*v, 0.3, epsilon = 1e-6);
        }
    }

    #[test]
    fn composite_degenerate_and_air() {
        let c = make_composite(&one(-1024.0), &WindowSet::default());
        assert_eq!(c.pixel(0, 0), [0.0, 0.0, 0.0]);
        assert_eq!(c.channels().iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 1, 1]);
    }

    #[test]
    fn window_set_rejects_duplicates_and_gaps() {
        let b = WindowSpec::default_for(WindowName::Brain);
        let s = WindowSpec::default_for(WindowName::Subdural);
        let o = WindowSpec::default_for(WindowName::Bone);
        assert_eq!(
            WindowSet::new(&[b, s, b]),
            Err(ImagingError::DuplicateWindow(WindowName::Brain))
        );
        assert_eq!(
            WindowSet::new(&[b, o]),
            Err(ImagingError::MissingWindow(WindowName::Subdural))
        );
        let set = WindowSet::new(&[o, b, s]).unwrap();
        assert_eq!(set.specs()[2].name, WindowName::Bone);
        assert!(make_composite_from_specs(&one(0.0), &[b, s, s]).is_err());
    }

    #[test]
    fn zero_width_window_is_rejected() {
        assert!(matches!(
            WindowSpec::new(WindowName::Bone, 600.0, 0.0),
            Err(ImagingError::InvalidWidth { .. })
        ));
    }

    #[test]
    fn non_finite_hu_names_slice_and_pixel() {
        let err = CtSlice::new(sid(), 2, 2, vec![0.0, 0.0, f32::NAN, 0.0]).unwrap_err();
        assert_eq!(
            err,
            ImagingError::NonFiniteHu {
                slice_id: "s0".into(),
                x: 0,
                y: 1
            }
        );
    }

    #[test]
    fn rescale_applied_before_windowing() {
        let s = CtSlice::from_stored(sid(), 2, 2, vec![0.0; 4], Rescale::new(1.0, -1024.0).unwrap()).unwrap();
        assert!(s.hu().iter().all(|&v| v == -1024.0));
    }

    proptest! {
        #[test]
        fn window_is_monotone_and_clamped(a in -5000.0f64..5000.0, b in -5000.0f64..5000.0,
                                          level in -1000.0f64..2000.0, width in 1.0f64..4000.0) {
            let spec = WindowSpec::new(WindowName::Brain, level, width).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(spec.map(lo) <= spec.map(hi));
            prop_assert!((0.0..=1.0).contains(&spec.map(a)));
        }
    }
}
