//! K-means tissue clustering inside a box and lesion-cluster selection.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::seed::seeded_rng;
use super::skull::SkullStripped;
use super::PromptError;
use crate::imaging::CompositeImage;
use crate::raster::{BinaryMask, PixelBox, Point};

pub const MAX_ITERATIONS: usize = 100;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<[f64; 3]>,
    pub iterations: usize,
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(p: &[f64; 3], centroids: &[[f64; 3]]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when no centroid moves by `CONVERGENCE_TOLERANCE` or more, or after
/// `MAX_ITERATIONS` updates. A cluster that loses all its points keeps its
/// previous centroid. When every remaining point coincides with a chosen
/// centroid, seeding repeats the last centroid, which leaves the extra
/// clusters empty.
pub fn kmeans(points: &[[f64; 3]], k: usize, seed: u64) -> KMeansResult {
    assert!(k >= 1 && points.len() >= k, "kmeans needs at least k points");
    let mut rng = seeded_rng(seed);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Guard against landing on a zero-weight tail through rounding.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).expect("total > 0");
            }
            points[chosen]
        } else {
            *centroids.last().expect("non-empty")
        };
        centroids.push(next);
        for (w, p) in d2.iter_mut().zip(points) {
            *w = w.min(dist2(p, &next));
        }
    }

    let mut labels = vec![0usize; points.len()];
    let mut iterations = 0;
    loop {
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centroids);
        }
        if iterations == MAX_ITERATIONS {
            break;
        }
        iterations += 1;
        let mut sums = vec![[0.0f64; 3]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            for c in 0..3 {
                sums[*l][c] += p[c];
            }
        }
        let mut max_shift = 0.0f64;
        for j in 0..k {
            if counts[j] == 0 {
                continue;
            }
            let n = counts[j] as f64;
            let updated = [sums[j][0] / n, sums[j][1] / n, sums[j][2] / n];
            max_shift = max_shift.max(dist2(&updated, &centroids[j]).sqrt());
            centroids[j] = updated;
        }
        if max_shift < CONVERGENCE_TOLERANCE {
            for (l, p) in labels.iter_mut().zip(points) {
                *l = nearest(p, &centroids);
            }
            break;
        }
    }
    KMeansResult {
        labels,
        centroids,
        iterations,
    }
}

/// Per-cluster summary. Means are `None` for empty clusters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub count: usize,
    pub mean_hu: Option<f64>,
    pub mean_bone: Option<f64>,
    /// Row-major ROI index of the cluster's first pixel; a label-free tie-breaker.
    pub first_pixel: Option<usize>,
}

/// Cluster labels over a box ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMap {
    roi: PixelBox,
    k: usize,
    labels: Vec<u8>,
    stats: Vec<ClusterStats>,
}

impl ClusterMap {
    /// Label of pixels that were skull-stripped and so not clustered.
    pub const STRIPPED: u8 = u8::MAX;

    pub fn roi(&self) -> PixelBox {
        self.roi
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Row-major ROI labels; [`Self::STRIPPED`] for excluded pixels.
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn stats(&self) -> &[ClusterStats] {
        &self.stats
    }

    /// Label at image coordinates, `None` outside the ROI or for stripped pixels.
    pub fn label_at(&self, p: Point) -> Option<usize> {
        if !self.roi.contains_point(p) {
            return None;
        }
        let i = (p.y - self.roi.y0) as usize * self.roi.width() as usize + (p.x - self.roi.x0) as usize;
        let l = self.labels[i];
        (l != Self::STRIPPED).then_some(l as usize)
    }

    /// ROI-sized mask of one cluster.
    pub fn cluster_mask(&self, id: usize) -> BinaryMask {
        BinaryMask::from_bits(
            self.roi.width(),
            self.roi.height(),
            self.labels
                .iter()
                .map(|&l| usize::from(l) == id && l != Self::STRIPPED)
                .collect(),
        )
        .expect("labels cover the roi")
    }

    pub fn nonempty_clusters(&self) -> impl Iterator<Item = usize> + '_ {
        self.stats
            .iter()
            .enumerate()
            .filter(|(_, s)| s.count > 0)
            .map(|(i, _)| i)
    }

    /// Assembles a map from explicit labels, recomputing the statistics.
    /// `hu` and `bone` are ROI-sized, row-major.
    pub fn from_labels(roi: PixelBox, k: usize, labels: Vec<u8>, hu: &[f64], bone: &[f64]) -> Self {
        assert_eq!(labels.len(), roi.area() as usize);
        let mut sums = vec![(0usize, 0.0f64, 0.0f64, None::<usize>); k];
        for (i, &l) in labels.iter().enumerate() {
            if l == Self::STRIPPED {
                continue;
            }
            let s = &mut sums[l as usize];
            s.0 += 1;
            s.1 += hu[i];
            s.2 += bone[i];
            s.3.get_or_insert(i);
        }
        let stats = sums
            .into_iter()
            .map(|(count, h, b, first)| ClusterStats {
                count,
                mean_hu: (count > 0).then(|| h / count as f64),
                mean_bone: (count > 0).then(|| b / count as f64),
                first_pixel: first,
            })
            .collect();
        Self { roi, k, labels, stats }
    }
}

/// K-means over the composite vectors of the non-stripped pixels in `bbox`.
///
/// Distances are Euclidean in composite space; the statistics used for
/// lesion selection come from the HU values and the bone channel.
pub fn cluster_roi(
    composite: &CompositeImage,
    stripped: &SkullStripped,
    bbox: &PixelBox,
    k: usize,
    seed: u64,
) -> Result<ClusterMap, PromptError> {
    let (w, h) = (composite.width(), composite.height());
    if !bbox.fits_within(w, h) {
        return Err(PromptError::BoxOutOfBounds {
            bbox: *bbox,
            width: w,
            height: h,
        });
    }
    if (stripped.slice.width(), stripped.slice.height()) != (w, h) {
        return Err(PromptError::MaskDimensionMismatch {
            expected: (w, h),
            actual: (stripped.slice.width(), stripped.slice.height()),
        });
    }
    if k == 0 || k >= usize::from(ClusterMap::STRIPPED) {
        return Err(PromptError::InvalidSpec(format!("cluster count {k} out of range")));
    }
    let mut features = Vec::new();
    let mut positions = Vec::new();
    let mut hu = Vec::with_capacity(bbox.area() as usize);
    let mut bone = Vec::with_capacity(bbox.area() as usize);
    for (i, p) in bbox.iter_points().enumerate() {
        let px = composite.pixel(p.x, p.y);
        hu.push(f64::from(stripped.slice.hu_at(p.x, p.y)));
        bone.push(f64::from(px[2]));
        if stripped.brain_mask.get(p.x, p.y) {
            features.push(px.map(f64::from));
            positions.push(i);
        }
    }
    if features.len() < k {
        return Err(PromptError::TooFewPixels {
            usable: features.len(),
            k,
        });
    }
    let result = kmeans(&features, k, seed);
    let mut labels = vec![ClusterMap::STRIPPED; bbox.area() as usize];
    for (pos, l) in positions.iter().zip(&result.labels) {
        labels[*pos] = *l as u8;
    }
    Ok(ClusterMap::from_labels(*bbox, k, labels, &hu, &bone))
}

/// Picks the lesion cluster by mean HU: the brightest nonempty cluster,
/// unless its mean bone-channel value reaches `bone_saturation_threshold`
/// (residual skull), in which case the runner-up.
pub fn select_lesion_cluster(map: &ClusterMap, bone_saturation_threshold: f64) -> Result<usize, PromptError> {
    let mut ranked: Vec<usize> = map.nonempty_clusters().collect();
    if ranked.len() < 2 {
        return Err(PromptError::DegenerateClustering { nonempty: ranked.len() });
    }
    let stats = map.stats();
    ranked.sort_by(|&a, &b| {
        let (sa, sb) = (&stats[a], &stats[b]);
        sb.mean_hu
            .partial_cmp(&sa.mean_hu)
            .unwrap_or(Ordering::Equal)
            .then(sa.first_pixel.cmp(&sb.first_pixel))
    });
    let top = ranked[0];
    let bone_top = stats[top].mean_bone.unwrap_or(0.0);
    Ok(if bone_top >= bone_saturation_threshold {
        ranked[1]
    } else {
        top
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{make_composite, CtSlice, SliceId, WindowSet};
    use crate::prompt::strip_skull;

    fn map_with(means: &[(f64, f64)], per_cluster: usize) -> ClusterMap {
        let k = means.len();
        let n = k * per_cluster;
        let roi = PixelBox::new(0, 0, n as u32, 1).unwrap();
        let labels: Vec<u8> = (0..n).map(|i| (i / per_cluster) as u8).collect();
        let hu: Vec<f64> = labels.iter().map(|&l| means[l as usize].0).collect();
        let bone: Vec<f64> = labels.iter().map(|&l| means[l as usize].1).collect();
        ClusterMap::from_labels(roi, k, labels, &hu, &bone)
    }

    #[test]
    fn residual_bone_defers_to_second_brightest() {
        let m = map_with(&[(30.0, 0.3), (1200.0, 0.99), (5.0, 0.28), (70.0, 0.31)], 3);
        assert_eq!(select_lesion_cluster(&m, 0.95).unwrap(), 3);
    }

    #[test]
    fn brightest_wins_without_bone() {
        let m = map_with(&[(35.0, 0.1), (2.0, 0.1), (75.0, 0.1), (10.0, 0.1)], 2);
        assert_eq!(select_lesion_cluster(&m, 0.95).unwrap(), 2);
    }

    #[test]
    fn two_clusters_reduce_to_brighter() {
        let m = map_with(&[(20.0, 0.2), (60.0, 0.3)], 4);
        assert_eq!(select_lesion_cluster(&m, 0.95).unwrap(), 1);
        let single = map_with(&[(20.0, 0.2)], 4);
        assert!(matches!(
            select_lesion_cluster(&single, 0.95),
            Err(PromptError::DegenerateClustering { nonempty: 1 })
        ));
    }

    #[test]
    fn relabelling_does_not_change_selected_pixels() {
        let means = [(30.0, 0.3), (1200.0, 0.99), (5.0, 0.28), (70.0, 0.31)];
        let m = map_with(&means, 3);
        let perm = [2u8, 0, 3, 1];
        let labels: Vec<u8> = m.labels().iter().map(|&l| perm[l as usize]).collect();
        let hu: Vec<f64> = m.labels().iter().map(|&l| means[l as usize].0).collect();
        let bone: Vec<f64> = m.labels().iter().map(|&l| means[l as usize].1).collect();
        let relabelled = ClusterMap::from_labels(m.roi(), 4, labels, &hu, &bone);
        let a = m.cluster_mask(select_lesion_cluster(&m, 0.95).unwrap());
        let b = relabelled.cluster_mask(select_lesion_cluster(&relabelled, 0.95).unwrap());
        assert_eq!(a, b);
    }

    fn brute_force_sse(points: &[[f64; 3]], weights: &[usize], k: usize) -> f64 {
        // Minimum weighted SSE over every assignment of distinct points to at most k groups.
        fn rec(
            i: usize,
            assign: &mut Vec<usize>,
            used: usize,
            k: usize,
            pts: &[[f64; 3]],
            w: &[usize],
            best: &mut f64,
        ) {
            if i == pts.len() {
                let mut sse = 0.0;
                for g in 0..used {
                    let members: Vec<usize> = (0..pts.len()).filter(|&j| assign[j] == g).collect();
                    let n: f64 = members.iter().map(|&j| w[j] as f64).sum();
                    let mut c = [0.0; 3];
                    for &j in &members {
                        for d in 0..3 {
                            c[d] += pts[j][d] * w[j] as f64 / n;
                        }
                    }
                    sse += members.iter().map(|&j| dist2(&pts[j], &c) * w[j] as f64).sum::<f64>();
                }
                *best = best.min(sse);
                return;
            }
            for g in 0..(used + 1).min(k) {
                assign.push(g);
                rec(i + 1, assign, used.max(g + 1), k, pts, w, best);
                assign.pop();
            }
        }
        let mut best = f64::INFINITY;
        rec(0, &mut Vec::new(), 0, k, points, weights, &mut best);
        best
    }

    #[test]
    fn four_constant_regions_match_exhaustive_optimum() {
        // 8x8 ROI split into quadrants with distinct HU; no skull so nothing is stripped.
        let quad_hu = [-5.0f32, 28.0, 62.0, 95.0];
        let hu: Vec<f32> = (0..64).map(|i| quad_hu[((i / 8) / 4) * 2 + (i % 8) / 4]).collect();
        let slice = CtSlice::new(SliceId::new("q", "p", 0), 8, 8, hu).unwrap();
        let comp = make_composite(&slice, &WindowSet::default());
        let stripped = strip_skull(&slice, None).unwrap();
        let roi = PixelBox::new(0, 0, 8, 8).unwrap();
        for seed in 0..20 {
            let map = cluster_roi(&comp, &stripped, &roi, 4, seed).unwrap();
            // Distinct composite vectors and their multiplicities.
            let mut distinct: Vec<([f64; 3], Vec<u8>)> = Vec::new();
            for (i, p) in roi.iter_points().enumerate() {
                let v = comp.pixel(p.x, p.y).map(f64::from);
                match distinct.iter_mut().find(|(d, _)| *d == v) {
                    Some((_, ls)) => ls.push(map.labels()[i]),
                    None => distinct.push((v, vec![map.labels()[i]])),
                }
            }
            let pts: Vec<[f64; 3]> = distinct.iter().map(|(d, _)| *d).collect();
            let w: Vec<usize> = distinct.iter().map(|(_, l)| l.len()).collect();
            let optimum = brute_force_sse(&pts, &w, 4);
            let mut sse = 0.0;
            for (i, p) in roi.iter_points().enumerate() {
                let l = map.labels()[i] as usize;
                let members: Vec<_> = roi
                    .iter_points()
                    .enumerate()
                    .filter(|(j, _)| map.labels()[*j] as usize == l)
                    .collect();
                let mut c = [0.0; 3];
                for (_, q) in &members {
                    let v = comp.pixel(q.x, q.y);
                    for d in 0..3 {
                        c[d] += f64::from(v[d]) / members.len() as f64;
                    }
                }
                sse += dist2(&comp.pixel(p.x, p.y).map(f64::from), &c);
            }
            assert!(
                (sse - optimum).abs() < 1e-9,
                "seed {seed}: sse {sse} vs optimum {optimum}"
            );
            // Each constant region maps onto a single label.
            assert!(distinct.iter().all(|(_, ls)| ls.iter().all(|&l| l == ls[0])));
        }
    }

    #[test]
    fn uniform_roi_collapses_to_one_cluster() {
        let slice = CtSlice::filled(SliceId::new("u", "p", 0), 6, 6, 40.0).unwrap();
        let comp = make_composite(&slice, &WindowSet::default());
        let stripped = strip_skull(&slice, None).unwrap();
        let map = cluster_roi(&comp, &stripped, &PixelBox::new(0, 0, 6, 6).unwrap(), 4, 9).unwrap();
        assert_eq!(map.nonempty_clusters().count(), 1);
        assert_eq!(map.stats().iter().map(|s| s.count).sum::<usize>(), 36);
    }

    #[test]
    fn clustering_is_deterministic_per_seed() {
        let hu: Vec<f32> = (0..100).map(|i| ((i * 37) % 120) as f32 - 20.0).collect();
        let slice = CtSlice::new(SliceId::new("d", "p", 0), 10, 10, hu).unwrap();
        let comp = make_composite(&slice, &WindowSet::default());
        let stripped = strip_skull(&slice, None).unwrap();
        let roi = PixelBox::new(1, 1, 9, 9).unwrap();
        let a = cluster_roi(&comp, &stripped, &roi, 4, 77).unwrap();
        assert_eq!(a, cluster_roi(&comp, &stripped, &roi, 4, 77).unwrap());
    }

    #[test]
    fn stripped_pixels_are_excluded() {
        let slice = CtSlice::filled(SliceId::new("s", "p", 0), 4, 4, 40.0).unwrap();
        let comp = make_composite(&slice, &WindowSet::default());
        let ext = BinaryMask::from_fn(4, 4, |x, _| x >= 2);
        let stripped = strip_skull(&slice, Some(&ext)).unwrap();
        let map = cluster_roi(&comp, &stripped, &PixelBox::new(0, 0, 4, 4).unwrap(), 2, 1).unwrap();
        assert_eq!(map.labels().iter().filter(|&&l| l == ClusterMap::STRIPPED).count(), 8);
        assert_eq!(map.label_at(Point::new(0, 0)), None);
        let tiny = strip_skull(&slice, Some(&BinaryMask::from_fn(4, 4, |x, y| x == 0 && y < 3))).unwrap();
        assert!(matches!(
            cluster_roi(&comp, &tiny, &PixelBox::new(0, 0, 4, 4).unwrap(), 4, 1),
            Err(PromptError::TooFewPixels { usable: 3, k: 4 })
        ));
    }
}
