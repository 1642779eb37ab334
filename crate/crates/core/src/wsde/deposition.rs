use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::pointing::PointingResult;
use super::SprayerSpec;
use crate::tensor::LabelMask;

/// Weight of `point_count` actuations in μL.
pub fn estimate_deposition(point_count: usize, calib: &SprayerSpec) -> f64 {
    point_count as f64 * calib.unit_deposit_ul
}

/// Area of `class_id` in cm².
pub fn coverage(mask: &LabelMask, class_id: u8, calib: &SprayerSpec) -> f64 {
    mask.count(class_id) as f64 * calib.cm2_per_pixel
}

/// Hit and miss percentages from sprayed and unsprayed instance counts;
/// `None` with no instances.
pub fn hit_miss_rate(sprayed: u64, unsprayed: u64) -> Option<(f64, f64)> {
    let total = sprayed + unsprayed;
    (total > 0).then(|| {
        let hit = sprayed as f64 / total as f64 * 100.0;
        (hit, 100.0 - hit)
    })
}

/// Keypoint counts and pointing-game outcome for one class in one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub class_id: usize,
    pub predicted: usize,
    pub ground_truth: usize,
    pub hits: usize,
    pub misses: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum HitRateMode {
    /// Hits and misses pooled over images, per class.
    #[default]
    Pooled,
    /// Mean of per-image accuracies, per class.
    PerImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassDeposition {
    pub class_id: usize,
    pub gt_ul: f64,
    pub predicted_ul: f64,
    /// Mean over images of `|predicted − gt|` in μL.
    pub absolute_difference_ul: f64,
    pub hit_rate: f64,
    pub predicted_points: usize,
    pub gt_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepositionReport {
    pub classes: Vec<ClassDeposition>,
    pub total_gt_ul: f64,
    pub total_predicted_ul: f64,
    /// Sum of the per-class mean absolute differences.
    pub total_absolute_difference_ul: f64,
    /// Unweighted mean of per-class hit rates.
    pub mean_hit_rate: f64,
}

/// Aggregates per-image class counts over a test set. Classes appear in
/// ascending id order; an image missing a class contributes zero counts.
pub fn deposition_report(per_image: &[Vec<ClassCounts>], calib: &SprayerSpec, mode: HitRateMode) -> DepositionReport {
    let mut class_ids: Vec<usize> = per_image.iter().flatten().map(|c| c.class_id).collect();
    class_ids.sort_unstable();
    class_ids.dedup();
    let images = per_image.len().max(1) as f64;

    let mut classes = Vec::with_capacity(class_ids.len());
    for &class_id in &class_ids {
        let mut by_image: BTreeMap<usize, ClassCounts> = BTreeMap::new();
        for (i, counts) in per_image.iter().enumerate() {
            for c in counts.iter().filter(|c| c.class_id == class_id) {
                let e = by_image.entry(i).or_insert(ClassCounts { class_id, predicted: 0, ground_truth: 0, hits: 0, misses: 0 });
                e.predicted += c.predicted;
                e.ground_truth += c.ground_truth;
                e.hits += c.hits;
                e.misses += c.misses;
            }
        }
        let predicted_points: usize = by_image.values().map(|c| c.predicted).sum();
        let gt_points: usize = by_image.values().map(|c| c.ground_truth).sum();
        let abs_sum: f64 = by_image
            .values()
            .map(|c| estimate_deposition(c.predicted.abs_diff(c.ground_truth), calib))
            .sum();
        let hit_rate = match mode {
            HitRateMode::Pooled => {
                let hits = by_image.values().map(|c| c.hits).sum();
                let misses = by_image.values().map(|c| c.misses).sum();
                PointingResult::from_counts(hits, misses).accuracy
            }
            HitRateMode::PerImage => {
                by_image.values().map(|c| PointingResult::from_counts(c.hits, c.misses).accuracy).sum::<f64>() / images
            }
        };
        classes.push(ClassDeposition {
            class_id,
            gt_ul: estimate_deposition(gt_points, calib),
            predicted_ul: estimate_deposition(predicted_points, calib),
            absolute_difference_ul: abs_sum / images,
            hit_rate,
            predicted_points,
            gt_points,
        });
    }

    let mean_hit_rate = if classes.is_empty() {
        0.0
    } else {
        classes.iter().map(|c| c.hit_rate).sum::<f64>() / classes.len() as f64
    };
    DepositionReport {
        total_gt_ul: classes.iter().map(|c| c.gt_ul).sum(),
        total_predicted_ul: classes.iter().map(|c| c.predicted_ul).sum(),
        total_absolute_difference_ul: classes.iter().map(|c| c.absolute_difference_ul).sum(),
        mean_hit_rate,
        classes,
    }
}
