//! Pixel-grid primitives shared by every stage: half-open boxes, points,
//! binary masks and connected-component labelling.
//!
//! Coordinates follow image convention: `x` is the column, `y` is the row,
//! the origin is the top-left pixel and boxes cover `[x0, x1) × [y0, y1)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Integer pixel position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

impl Point {
    pub fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }
}

/// Half-open integer box `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl PixelBox {
    /// Returns `None` unless `x0 < x1` and `y0 < y1`.
    pub fn new(x0: u32, y0: u32, x1: u32, y1: u32) -> Option<Self> {
        (x0 < x1 && y0 < y1).then_some(Self { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> u32 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> u32 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> u64 {
        u64::from(self.width()) * u64::from(self.height())
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= self.x0 && p.x < self.x1 && p.y >= self.y0 && p.y < self.y1
    }

    /// `other ⊆ self`.
    pub fn contains_box(&self, other: &PixelBox) -> bool {
        self.x0 <= other.x0 && self.y0 <= other.y0 && self.x1 >= other.x1 && self.y1 >= other.y1
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.x1 <= width && self.y1 <= height
    }

    /// Intersection with the `[0, width) × [0, height)` frame; `None` if nothing remains.
    pub fn clamp_to(&self, width: u32, height: u32) -> Option<PixelBox> {
        PixelBox::new(
            self.x0.min(width),
            self.y0.min(height),
            self.x1.min(width),
            self.y1.min(height),
        )
    }

    pub fn iter_points(&self) -> impl Iterator<Item = Point> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| Point::new(x, y)))
    }
}

/// Per-pixel boolean raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    /// Builds a mask from row-major bits. Returns `None` on a length mismatch.
    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() == width as usize * height as usize).then_some(Self { width, height, bits })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self { width, height, bits }
    }

    /// Mask that is true exactly on `bx` (clipped to the frame).
    pub fn from_box(width: u32, height: u32, bx: &PixelBox) -> Self {
        Self::from_fn(width, height, |x, y| bx.contains_point(Point::new(x, y)))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[self.offset(x, y)]
    }

    /// Out-of-frame reads are `false`.
    #[inline]
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && x < i64::from(self.width)
            && y < i64::from(self.height)
            && self.bits[self.offset(x as u32, y as u32)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.offset(x, y);
        self.bits[i] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn iter_true(&self) -> impl Iterator<Item = Point> + '_ {
        let w = self.width as usize;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| Point::new((i % w) as u32, (i / w) as u32))
    }

    pub fn same_dims(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims()
    }

    /// In-place union. Panics on a dimension mismatch; callers validate first.
    pub fn union_with(&mut self, other: &BinaryMask) {
        assert!(self.same_dims(other), "mask dimension mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn intersect_with(&mut self, other: &BinaryMask) {
        assert!(self.same_dims(other), "mask dimension mismatch");
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a &= *b;
        }
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a && **b).count()
    }

    pub fn union_count(&self, other: &BinaryMask) -> usize {
        self.bits.iter().zip(&other.bits).filter(|(a, b)| **a || **b).count()
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.same_dims(other) && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    /// Copy of the `bx` sub-window (box must fit the frame).
    pub fn crop(&self, bx: &PixelBox) -> BinaryMask {
        BinaryMask::from_fn(bx.width(), bx.height(), |x, y| self.get(bx.x0 + x, bx.y0 + y))
    }

    /// Tight bounding box of the true pixels.
    pub fn bounding_box(&self) -> Option<PixelBox> {
        let mut it = self.iter_true();
        let first = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (first.x, first.y, first.x, first.y);
        for p in it {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        PixelBox::new(x0, y0, x1 + 1, y1 + 1)
    }

    /// Pixels of the mask with at least one 4-neighbour outside it (frame edge counts as outside).
    pub fn contour(&self) -> BinaryMask {
        BinaryMask::from_fn(self.width, self.height, |x, y| {
            if !self.get(x, y) {
                return false;
            }
            let (xi, yi) = (i64::from(x), i64::from(y));
            !(self.get_signed(xi - 1, yi)
                && self.get_signed(xi + 1, yi)
                && self.get_signed(xi, yi - 1)
                && self.get_signed(xi, yi + 1))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(i64, i64)] {
        match self {
            Connectivity::Four => &[(0, -1), (1, 0), (0, 1), (-1, 0)],
            Connectivity::Eight => &[(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)],
        }
    }
}

/// Connected components of the true pixels.
#[derive(Debug, Clone)]
pub struct Components {
    /// Row-major component id per pixel; `None` for background.
    pub labels: Vec<Option<u32>>,
    /// Pixel count per component id.
    pub sizes: Vec<usize>,
    /// Whether each component touches the frame edge.
    pub touches_border: Vec<bool>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    pub fn mask_of(&self, width: u32, height: u32, id: u32) -> BinaryMask {
        BinaryMask::from_bits(width, height, self.labels.iter().map(|l| *l == Some(id)).collect())
            .expect("labels cover the frame")
    }
}

/// Labels components in scan order (ids increase with the first pixel's row-major index).
pub fn label_components(mask: &BinaryMask, connectivity: Connectivity) -> Components {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![None; mask.bits().len()];
    let mut sizes = Vec::new();
    let mut touches_border = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if !mask.bits()[start] || labels[start].is_some() {
            continue;
        }
        let id = sizes.len() as u32;
        let mut size = 0usize;
        let mut border = false;
        labels[start] = Some(id);
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            size += 1;
            let x = (i % w as usize) as i64;
            let y = (i / w as usize) as i64;
            if x == 0 || y == 0 || x == i64::from(w) - 1 || y == i64::from(h) - 1 {
                border = true;
            }
            for (dx, dy) in connectivity.offsets() {
                let (nx, ny) = (x + dx, y + dy);
                if mask.get_signed(nx, ny) {
                    let j = ny as usize * w as usize + nx as usize;
                    if labels[j].is_none() {
                        labels[j] = Some(id);
                        queue.push_back(j);
                    }
                }
            }
        }
        sizes.push(size);
        touches_border.push(border);
    }
    Components {
        labels,
        sizes,
        touches_border,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_rejects_degenerate_corners() {
        assert!(PixelBox::new(3, 1, 3, 5).is_none());
        assert!(PixelBox::new(3, 5, 4, 5).is_none());
        assert_eq!(PixelBox::new(0, 0, 2, 3).unwrap().area(), 6);
    }

    #[test]
    fn clamp_drops_boxes_outside_frame() {
        let b = PixelBox::new(8, 8, 12, 12).unwrap();
        assert_eq!(b.clamp_to(10, 10), PixelBox::new(8, 8, 10, 10));
        assert_eq!(b.clamp_to(8, 20), None);
    }

    #[test]
    fn components_split_diagonal_only_under_four_connectivity() {
        let m = BinaryMask::from_fn(3, 3, |x, y| x == y);
        assert_eq!(label_components(&m, Connectivity::Eight).count(), 1);
        let four = label_components(&m, Connectivity::Four);
        assert_eq!(four.count(), 3);
        assert_eq!(four.touches_border, vec![true, false, true]);
    }

    #[test]
    fn contour_of_filled_square_is_its_rim() {
        let m = BinaryMask::from_box(5, 5, &PixelBox::new(1, 1, 4, 4).unwrap());
        let c = m.contour();
        assert_eq!(c.count(), 8);
        assert!(!c.get(2, 2));
    }

    #[test]
    fn bounding_box_is_tight() {
        let mut m = BinaryMask::new(6, 4);
        m.set(1, 2, true);
        m.set(4, 0, true);
        assert_eq!(m.bounding_box(), PixelBox::new(1, 0, 5, 3));
        assert_eq!(BinaryMask::new(2, 2).bounding_box(), None);
    }
}
