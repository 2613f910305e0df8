use serde::{Deserialize, Serialize};

use super::PromptError;
use crate::imaging::CtSlice;
use crate::raster::{label_components, BinaryMask, Connectivity};

/// HU above which a pixel is treated as bone.
pub const BONE_HU: f32 = 300.0;
/// Value written to pixels outside the brain mask.
pub const STRIPPED_HU: f32 = -1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StripMethod {
    /// Caller-supplied brain mask used verbatim.
    External,
    /// Largest bone-enclosed region, hole-filled and eroded by one pixel.
    Enclosed,
    /// No bone in the slice; nothing stripped.
    NoBone,
    /// Bone present but no region enclosed by it; nothing stripped.
    NotEnclosed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkullStripped {
    pub slice: CtSlice,
    pub brain_mask: BinaryMask,
    pub method: StripMethod,
}

/// Suppresses everything outside the brain.
///
/// Without an external mask the brain is approximated as follows: threshold
/// `HU > 300` as bone, take the largest 4-connected non-bone component that
/// does not touch the frame, fill its holes and erode it with a 3×3 square.
pub fn strip_skull(slice: &CtSlice, external_mask: Option<&BinaryMask>) -> Result<SkullStripped, PromptError> {
    let (w, h) = (slice.width(), slice.height());
    let (brain_mask, method) = match external_mask {
        Some(m) => {
            if m.dims() != (w, h) {
                return Err(PromptError::MaskDimensionMismatch {
                    expected: (w, h),
                    actual: m.dims(),
                });
            }
            (m.clone(), StripMethod::External)
        }
        None => builtin_brain_mask(slice),
    };
    let stripped = slice.map_pixels(|x, y, hu| if brain_mask.get(x, y) { hu } else { STRIPPED_HU });
    Ok(SkullStripped {
        slice: stripped,
        brain_mask,
        method,
    })
}

fn builtin_brain_mask(slice: &CtSlice) -> (BinaryMask, StripMethod) {
    let (w, h) = (slice.width(), slice.height());
    let bone = BinaryMask::from_fn(w, h, |x, y| slice.hu_at(x, y) > BONE_HU);
    if bone.is_empty() {
        return (BinaryMask::full(w, h), StripMethod::NoBone);
    }
    let soft = BinaryMask::from_fn(w, h, |x, y| !bone.get(x, y));
    let comps = label_components(&soft, Connectivity::Four);
    let best = (0..comps.count())
        .filter(|&i| !comps.touches_border[i])
        .max_by(|&a, &b| comps.sizes[a].cmp(&comps.sizes[b]).then(b.cmp(&a)));
    let Some(best) = best else {
        return (BinaryMask::full(w, h), StripMethod::NotEnclosed);
    };
    let region = comps.mask_of(w, h, best as u32);
    (erode3x3(&fill_holes(&region)), StripMethod::Enclosed)
}

/// Sets every background pixel that cannot reach the frame edge through background.
pub fn fill_holes(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = mask.dims();
    let bg = BinaryMask::from_fn(w, h, |x, y| !mask.get(x, y));
    let comps = label_components(&bg, Connectivity::Four);
    let mut out = mask.clone();
    for (i, label) in comps.labels.iter().enumerate() {
        if let Some(id) = label {
            if !comps.touches_border[*id as usize] {
                out.set((i % w as usize) as u32, (i / w as usize) as u32, true);
            }
        }
    }
    out
}

/// Keeps a pixel only if its whole 3×3 neighbourhood is set; outside the frame counts as unset.
pub fn erode3x3(mask: &BinaryMask) -> BinaryMask {
    BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
        let (xi, yi) = (i64::from(x), i64::from(y));
        (-1..=1).all(|dy| (-1..=1).all(|dx| mask.get_signed(xi + dx, yi + dy)))
    })
}
