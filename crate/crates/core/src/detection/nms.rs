use super::RawDetection;

/// IoU used when an exported detector graph has no suppression stage of its own.
pub const DEFAULT_NMS_IOU: f64 = 0.45;

pub fn box_iou(a: &RawDetection, b: &RawDetection) -> f64 {
    let iw = (a.x1.min(b.x1) - a.x0.max(b.x0)).max(0.0);
    let ih = (a.y1.min(b.y1) - a.y0.max(b.y0)).max(0.0);
    let inter = iw * ih;
    let area = |r: &RawDetection| (r.x1 - r.x0).max(0.0) * (r.y1 - r.y0).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy per-class suppression: within a subtype, a box is dropped when it
/// overlaps an already kept, higher-confidence box with IoU above `iou_threshold`.
pub fn non_max_suppression(mut boxes: Vec<RawDetection>, iou_threshold: f64) -> Vec<RawDetection> {
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut kept: Vec<RawDetection> = Vec::with_capacity(boxes.len());
    for b in boxes {
        if kept
            .iter()
            .all(|k| k.subtype != b.subtype || box_iou(k, &b) <= iou_threshold)
        {
            kept.push(b);
        }
    }
    kept
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Subtype;

    fn r(x0: f64, x1: f64, c: f64, subtype: Subtype) -> RawDetection {
        RawDetection {
            x0,
            y0: 0.0,
            x1,
            y1: 10.0,
            subtype,
            confidence: c,
        }
    }

    #[test]
    fn iou_of_half_overlap() {
        // intersection 5x10, union 15x10
        let v = box_iou(&r(0.0, 10.0, 1.0, Subtype::Iph), &r(5.0, 15.0, 1.0, Subtype::Iph));
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlapping_same_class_is_suppressed() {
        let out = non_max_suppression(
            vec![
                r(0.0, 10.0, 0.6, Subtype::Iph),
                r(1.0, 10.0, 0.9, Subtype::Iph),
                r(1.0, 10.0, 0.5, Subtype::Sdh),
            ],
            DEFAULT_NMS_IOU,
        );
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].confidence, 0.9);
        assert_eq!(out[1].subtype, Subtype::Sdh);
    }

    #[test]
    fn disjoint_boxes_survive() {
        let out = non_max_suppression(
            vec![r(0.0, 4.0, 0.6, Subtype::Iph), r(6.0, 9.0, 0.7, Subtype::Iph)],
            0.45,
        );
        assert_eq!(out.len(), 2);
    }
}
