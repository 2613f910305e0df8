use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::imaging::{CompositeImage, WindowName};
use crate::raster::{BinaryMask, PixelBox, Point};

/// Overlay colours. Contours are drawn first, then boxes, then point glyphs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Palette {
    pub truth: [u8; 3],
    pub prediction: [u8; 3],
    pub boxes: [u8; 3],
    pub positive: [u8; 3],
    pub negative: [u8; 3],
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            truth: [0, 255, 0],
            prediction: [255, 0, 0],
            boxes: [255, 255, 0],
            positive: [0, 255, 255],
            negative: [255, 0, 255],
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OverlayLayers<'a> {
    pub prediction: Option<&'a BinaryMask>,
    pub truth: Option<&'a BinaryMask>,
    pub boxes: &'a [PixelBox],
    pub positive_points: &'a [Point],
    pub negative_points: &'a [Point],
}

/// Brain-window greyscale with mask contours, box outlines and point glyphs
/// (`+` positive, `×` negative). Glyph arms are clipped at the frame.
pub fn render_overlay(
    image: &CompositeImage,
    layers: &OverlayLayers<'_>,
    palette: &Palette,
) -> Result<RgbImage, String> {
    let (w, h) = (image.width(), image.height());
    for (name, m) in [("prediction", layers.prediction), ("truth", layers.truth)] {
        if let Some(m) = m {
            if m.dims() != (w, h) {
                return Err(format!("{name} mask is {:?}, image is {:?}", m.dims(), (w, h)));
            }
        }
    }
    if let Some(b) = layers.boxes.iter().find(|b| !b.fits_within(w, h)) {
        return Err(format!("box {b:?} exceeds the {w}x{h} image"));
    }
    if let Some(p) = layers
        .positive_points
        .iter()
        .chain(layers.negative_points)
        .find(|p| p.x >= w || p.y >= h)
    {
        return Err(format!("point {p:?} outside the {w}x{h} image"));
    }

    let brain = image.channel(WindowName::Brain);
    let mut out = RgbImage::from_fn(w, h, |x, y| {
        let v = (brain[(y * w + x) as usize].clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    for (mask, colour) in [(layers.truth, palette.truth), (layers.prediction, palette.prediction)] {
        if let Some(m) = mask {
            for p in m.contour().iter_true() {
                out.put_pixel(p.x, p.y, Rgb(colour));
            }
        }
    }
    for b in layers.boxes {
        for p in b.iter_points() {
            if p.x == b.x0 || p.y == b.y0 || p.x + 1 == b.x1 || p.y + 1 == b.y1 {
                out.put_pixel(p.x, p.y, Rgb(palette.boxes));
            }
        }
    }
    let mut glyph = |p: &Point, arms: [(i64, i64); 4], colour: [u8; 3]| {
        for (dx, dy) in std::iter::once((0, 0)).chain(arms) {
            let (x, y) = (i64::from(p.x) + dx, i64::from(p.y) + dy);
            if (0..i64::from(w)).contains(&x) && (0..i64::from(h)).contains(&y) {
                out.put_pixel(x as u32, y as u32, Rgb(colour));
            }
        }
    };
    for p in layers.positive_points {
        glyph(p, [(-1, 0), (1, 0), (0, -1), (0, 1)], palette.positive);
    }
    for p in layers.negative_points {
        glyph(p, [(-1, -1), (1, 1), (1, -1), (-1, 1)], palette.negative);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::SliceId;

    fn image(w: u32, h: u32) -> CompositeImage {
        let n = (w * h) as usize;
        let brain = (0..n).map(|i| (i % 3) as f32 / 4.0).collect();
        CompositeImage::from_channels(SliceId::new("o", "p", 0), w, h, [brain, vec![0.0; n], vec![0.0; n]]).unwrap()
    }

    /// One character per pixel: the palette colour's initial, or `.` for grey.
    fn ascii(img: &RgbImage, palette: &Palette) -> String {
        let names = [
            (palette.truth, 'G'),
            (palette.prediction, 'R'),
            (palette.boxes, 'Y'),
            (palette.positive, 'C'),
            (palette.negative, 'M'),
        ];
        let mut s = String::new();
        for y in 0..img.height() {
            for x in 0..img.width() {
                let px = img.get_pixel(x, y).0;
                s.push(names.iter().find(|(c, _)| *c == px).map_or('.', |(_, ch)| *ch));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn matches_golden_rendering() {
        let palette = Palette::default();
        let truth = BinaryMask::from_box(12, 9, &PixelBox::new(2, 2, 7, 7).unwrap());
        let pred = BinaryMask::from_box(12, 9, &PixelBox::new(3, 3, 8, 7).unwrap());
        let boxes = [PixelBox::new(1, 1, 10, 8).unwrap()];
        let layers = OverlayLayers {
            prediction: Some(&pred),
            truth: Some(&truth),
            boxes: &boxes,
            positive_points: &[Point::new(5, 4)],
            negative_points: &[Point::new(10, 0)],
        };
        let img = render_overlay(&image(12, 9), &layers, &palette).unwrap();
        let golden = include_str!("../../tests/golden/overlay_12x9.txt");
        assert_eq!(ascii(&img, &palette), golden);
        // Background stays the brain channel.
        assert_eq!(img.get_pixel(1, 8).0, [64, 64, 64]);
    }

    #[test]
    fn empty_mask_draws_boxes_only() {
        let palette = Palette::default();
        let empty = BinaryMask::new(5, 4);
        let boxes = [PixelBox::new(0, 0, 5, 4).unwrap()];
        let img = render_overlay(
            &image(5, 4),
            &OverlayLayers {
                prediction: Some(&empty),
                boxes: &boxes,
                ..OverlayLayers::default()
            },
            &palette,
        )
        .unwrap();
        assert_eq!(ascii(&img, &palette), "YYYYY\nY...Y\nY...Y\nYYYYY\n");
    }

    #[test]
    fn one_pixel_image() {
        let img = render_overlay(&image(1, 1), &OverlayLayers::default(), &Palette::default()).unwrap();
        assert_eq!(img.dimensions(), (1, 1));
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let m = BinaryMask::new(3, 3);
        let layers = OverlayLayers {
            truth: Some(&m),
            ..OverlayLayers::default()
        };
        assert!(render_overlay(&image(4, 4), &layers, &Palette::default())
            .unwrap_err()
            .contains("truth"));
    }
}
