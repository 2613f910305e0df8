//! Zhang-Suen thinning.
//!
//! Two sub-iterations per pass, repeated until nothing changes. Pixels
//! outside the frame read as background. Plain Zhang-Suen erases some small
//! shapes outright (a 2×2 block, for one); after thinning, any 8-connected
//! component of the input left without a skeleton pixel gets back the pixel
//! of it that was deleted last (ties: first in row-major order).

use crate::raster::{label_components, BinaryMask, Connectivity};

/// Neighbours P2..P9, clockwise from north.
fn neighbours(m: &BinaryMask, x: u32, y: u32) -> [bool; 8] {
    let (x, y) = (i64::from(x), i64::from(y));
    [
        m.get_signed(x, y - 1),
        m.get_signed(x + 1, y - 1),
        m.get_signed(x + 1, y),
        m.get_signed(x + 1, y + 1),
        m.get_signed(x, y + 1),
        m.get_signed(x - 1, y + 1),
        m.get_signed(x - 1, y),
        m.get_signed(x - 1, y - 1),
    ]
}

fn deletable(p: &[bool; 8], first_pass: bool) -> bool {
    let b = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *p;
    if first_pass {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Thins `mask` to a one-pixel-wide skeleton. The result is a subset of `mask`.
pub fn skeletonize(mask: &BinaryMask) -> BinaryMask {
    let mut img = mask.clone();
    // Sub-iteration index at which each pixel was removed.
    let mut removed_at = vec![0usize; mask.bits().len()];
    let mut step = 0usize;
    let w = mask.width() as usize;
    loop {
        let mut changed = false;
        for first_pass in [true, false] {
            step += 1;
            let doomed: Vec<(u32, u32)> = img
                .iter_true()
                .filter(|p| deletable(&neighbours(&img, p.x, p.y), first_pass))
                .map(|p| (p.x, p.y))
                .collect();
            for &(x, y) in &doomed {
                img.set(x, y, false);
                removed_at[y as usize * w + x as usize] = step;
            }
            changed |= !doomed.is_empty();
        }
        if !changed {
            break;
        }
    }

    let comps = label_components(mask, Connectivity::Eight);
    let mut has_skeleton = vec![false; comps.count()];
    for p in img.iter_true() {
        if let Some(id) = comps.labels[p.y as usize * w + p.x as usize] {
            has_skeleton[id as usize] = true;
        }
    }
    let mut restore: Vec<Option<(usize, usize)>> = vec![None; comps.count()];
    for (i, label) in comps.labels.iter().enumerate() {
        let Some(id) = label else { continue };
        let id = *id as usize;
        if has_skeleton[id] {
            continue;
        }
        match restore[id] {
            Some((_, best)) if removed_at[i] <= best => {}
            _ => restore[id] = Some((i, removed_at[i])),
        }
    }
    for (i, _) in restore.into_iter().flatten() {
        img.set((i % w) as u32, (i / w) as u32, true);
    }
    img
}
