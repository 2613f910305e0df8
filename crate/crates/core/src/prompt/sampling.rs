use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::cluster::{cluster_roi, select_lesion_cluster, ClusterMap};
use super::seed::seeded_rng;
use super::skeleton::skeletonize;
use super::skull::SkullStripped;
use super::PromptError;
use crate::imaging::CompositeImage;
use crate::raster::{PixelBox, Point};

/// Clustering and point-sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptConfig {
    pub clusters: usize,
    pub positive_points: usize,
    pub negative_points_per_cluster: usize,
    /// Mean bone-channel value at which the brightest cluster counts as residual skull.
    pub bone_saturation_threshold: f64,
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            clusters: 4,
            positive_points: 3,
            negative_points_per_cluster: 1,
            bone_saturation_threshold: 0.95,
        }
    }
}

impl PromptConfig {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.clusters < 2 || self.clusters >= usize::from(ClusterMap::STRIPPED) {
            return Err(PromptError::InvalidSpec(format!(
                "clusters must be in 2..255, got {}",
                self.clusters
            )));
        }
        if self.positive_points == 0 {
            return Err(PromptError::InvalidSpec("positive_points must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bone_saturation_threshold) {
            return Err(PromptError::InvalidSpec(format!(
                "bone_saturation_threshold must lie in [0, 1], got {}",
                self.bone_saturation_threshold
            )));
        }
        Ok(())
    }
}

/// Prompts for one ensemble member, in image coordinates.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptSet {
    pub bbox: Option<PixelBox>,
    pub positive_points: Vec<Point>,
    pub negative_points: Vec<Point>,
}

impl PromptSet {
    pub fn box_only(bbox: PixelBox) -> Self {
        Self {
            bbox: Some(bbox),
            ..Self::default()
        }
    }
}

/// Samples positive points from the lesion cluster's skeleton and negative
/// points from each other nonempty cluster.
///
/// An empty skeleton falls back to the lesion pixel nearest the lesion centroid.
pub fn generate_prompts(
    map: &ClusterMap,
    lesion_id: usize,
    config: &PromptConfig,
    seed: u64,
) -> Result<PromptSet, PromptError> {
    let stats = map.stats().get(lesion_id).ok_or(PromptError::EmptyLesion(lesion_id))?;
    if stats.count == 0 {
        return Err(PromptError::EmptyLesion(lesion_id));
    }
    let roi = map.roi();
    let to_image = |p: Point| Point::new(p.x + roi.x0, p.y + roi.y0);
    let mut rng = seeded_rng(seed);

    let lesion = map.cluster_mask(lesion_id);
    let skeleton: Vec<Point> = skeletonize(&lesion).iter_true().collect();
    let positive_points = if skeleton.is_empty() {
        vec![to_image(centroid_pixel(&lesion.iter_true().collect::<Vec<_>>()))]
    } else {
        let n = config.positive_points.min(skeleton.len());
        sample(&mut rng, skeleton.len(), n)
            .into_iter()
            .map(|i| to_image(skeleton[i]))
            .collect()
    };

    let mut negative_points = Vec::new();
    for id in map.nonempty_clusters().filter(|&id| id != lesion_id) {
        let pixels: Vec<Point> = map.cluster_mask(id).iter_true().collect();
        let n = config.negative_points_per_cluster.min(pixels.len());
        negative_points.extend(
            sample(&mut rng, pixels.len(), n)
                .into_iter()
                .map(|i| to_image(pixels[i])),
        );
    }

    Ok(PromptSet {
        bbox: Some(roi),
        positive_points,
        negative_points,
    })
}

fn centroid_pixel(pixels: &[Point]) -> Point {
    let n = pixels.len() as f64;
    let cx = pixels.iter().map(|p| f64::from(p.x)).sum::<f64>() / n;
    let cy = pixels.iter().map(|p| f64::from(p.y)).sum::<f64>() / n;
    let d = |p: &Point| (f64::from(p.x) - cx).powi(2) + (f64::from(p.y) - cy).powi(2);
    *pixels
        .iter()
        .min_by(|a, b| d(a).total_cmp(&d(b)))
        .expect("lesion cluster is nonempty")
}

/// Cluster the box, pick the lesion cluster and sample prompts, all from one seed.
pub fn prompts_for_box(
    composite: &CompositeImage,
    stripped: &SkullStripped,
    bbox: &PixelBox,
    config: &PromptConfig,
    seed: u64,
) -> Result<PromptSet, PromptError> {
    let map = cluster_roi(composite, stripped, bbox, config.clusters, seed)?;
    let lesion = select_lesion_cluster(&map, config.bone_saturation_threshold)?;
    generate_prompts(&map, lesion, config, seed.wrapping_add(1))
}
