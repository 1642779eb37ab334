//! Report bundle: the serializable tables a pipeline run produces, and the
//! pure functions that build each table from per-image partial results.
//!
//! Hit rates are fractions in `[0, 1]`; deposits are μL; areas are cm².

use serde::{Deserialize, Serialize};
use sprayeval_core::faithfulness::{class_averaged_scores, CURVE_POINTS};
use sprayeval_core::segmetrics::{
    dice_per_class, excluded_classes, iou_per_class, micro_f1, miou, pixel_accuracy_per_class,
};
use sprayeval_core::wsde::{coverage, deposition_report, estimate_deposition, ClassCounts, HitRateMode, SprayerSpec};
use sprayeval_core::{ClassTable, ConfusionTally, LabelMask};

pub const BUNDLE_FILE: &str = "bundle.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub config: BundleConfig,
    pub images: Vec<String>,
    pub segmentation: Vec<SegmentationTable>,
    pub faithfulness: Vec<FaithfulnessEntry>,
    pub faithfulness_summary: Vec<FaithfulnessSummary>,
    pub deposition: Vec<DepositionTable>,
    pub coverage: Vec<CoverageRow>,
    pub notes: Vec<String>,
}

impl Bundle {
    pub fn empty(config: BundleConfig) -> Self {
        Self {
            config,
            images: Vec::new(),
            segmentation: Vec::new(),
            faithfulness: Vec::new(),
            faithfulness_summary: Vec::new(),
            deposition: Vec::new(),
            coverage: Vec::new(),
            notes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleConfig {
    pub model: String,
    pub engine: String,
    pub dataset: String,
    pub stage: String,
    pub fusions: Vec<String>,
    pub fusion_space: String,
    pub cam: String,
    pub cluster: String,
    pub top_mode: String,
    pub unit_deposit_ul: f64,
    pub deposit_std_ul: f64,
    pub min_point_distance_px: f64,
    pub box_halfwidth_px: usize,
    pub cm2_per_pixel: f64,
    pub min_island_px: usize,
    pub include_background: bool,
    pub hit_rate_mode: String,
}

impl BundleConfig {
    pub fn sprayer(&self) -> SprayerSpec {
        SprayerSpec {
            unit_deposit_ul: self.unit_deposit_ul,
            deposit_std_ul: self.deposit_std_ul,
            min_point_distance_px: self.min_point_distance_px,
            box_halfwidth_px: self.box_halfwidth_px,
            cm2_per_pixel: self.cm2_per_pixel,
        }
    }

    pub fn hit_mode(&self) -> HitRateMode {
        if self.hit_rate_mode == "per-image" {
            HitRateMode::PerImage
        } else {
            HitRateMode::Pooled
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegClassRow {
    pub class_id: usize,
    pub name: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub pixel_accuracy: Option<f64>,
    pub dice: Option<f64>,
    pub iou: Option<f64>,
}

/// Per-class pixel accuracy, Dice and IoU with micro F1 and mIoU, computed
/// from the tally summed over the test images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationTable {
    pub model: String,
    pub fusion: String,
    pub classes: Vec<SegClassRow>,
    pub miou: Option<f64>,
    /// mIoU over all seven classes, background included.
    pub miou_with_background: Option<f64>,
    pub micro_f1: f64,
    pub excluded_classes: usize,
}

pub fn segmentation_table(model: &str, fusion: &str, t: &ConfusionTally, include_background: bool) -> SegmentationTable {
    let names = ClassTable::greenhouse();
    let (dice, iou, acc) = (dice_per_class(t), iou_per_class(t), pixel_accuracy_per_class(t));
    let first = if include_background { 0 } else { 1 };
    let classes = (first..t.num_classes())
        .map(|c| SegClassRow {
            class_id: c,
            name: names.name(c).unwrap_or_default().to_string(),
            tp: t.tp[c],
            fp: t.fp[c],
            fn_: t.fn_[c],
            pixel_accuracy: acc[c],
            dice: dice[c],
            iou: iou[c],
        })
        .collect();
    SegmentationTable {
        model: model.to_string(),
        fusion: fusion.to_string(),
        classes,
        miou: miou(t, include_background),
        miou_with_background: miou(t, true),
        micro_f1: micro_f1(t, include_background),
        excluded_classes: excluded_classes(t, include_background),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessEntry {
    pub image_id: String,
    pub fusion: String,
    pub class_id: usize,
    pub name: String,
    pub deletion_auc: f64,
    pub insertion_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaithfulnessSummary {
    pub model: String,
    pub fusion: String,
    pub cam: String,
    pub mean_deletion: Option<f64>,
    pub mean_insertion: Option<f64>,
    pub difference: Option<f64>,
    /// Mean Deletion strictly below mean Insertion.
    pub interpretable: bool,
    /// Classes averaged; each class first averages its images.
    pub classes: usize,
    pub skipped_classes: usize,
    pub mean_deletion_curve: Vec<f64>,
    pub mean_insertion_curve: Vec<f64>,
}

/// Class-averaged Deletion and Insertion for one fusion mode. `entries`
/// holds that mode's rows, `curves` the matching `(deletion, insertion)`
/// samples in the same order.
pub fn faithfulness_summary(
    model: &str,
    fusion: &str,
    cam: &str,
    entries: &[FaithfulnessEntry],
    curves: &[(Vec<f64>, Vec<f64>)],
) -> FaithfulnessSummary {
    let table = ClassTable::greenhouse();
    let mut per_class = Vec::new();
    let mut skipped = 0;
    for class in table.sprayed_classes() {
        let rows: Vec<&FaithfulnessEntry> = entries.iter().filter(|e| e.class_id == class).collect();
        if rows.is_empty() {
            skipped += 1;
            continue;
        }
        let n = rows.len() as f64;
        per_class.push((
            rows.iter().map(|e| e.deletion_auc).sum::<f64>() / n,
            rows.iter().map(|e| e.insertion_auc).sum::<f64>() / n,
        ));
    }
    let average = class_averaged_scores(&per_class).ok();
    let mean_curve = |pick: fn(&(Vec<f64>, Vec<f64>)) -> &Vec<f64>| -> Vec<f64> {
        if curves.is_empty() {
            return Vec::new();
        }
        (0..CURVE_POINTS)
            .map(|i| curves.iter().map(|c| pick(c)[i]).sum::<f64>() / curves.len() as f64)
            .collect()
    };
    FaithfulnessSummary {
        model: model.to_string(),
        fusion: fusion.to_string(),
        cam: cam.to_string(),
        mean_deletion: average.map(|a| a.mean_deletion),
        mean_insertion: average.map(|a| a.mean_insertion),
        difference: average.map(|a| a.difference()),
        interpretable: average.is_some_and(|a| a.interpretable),
        classes: per_class.len(),
        skipped_classes: skipped,
        mean_deletion_curve: mean_curve(|c| &c.0),
        mean_insertion_curve: mean_curve(|c| &c.1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositionRow {
    /// Base (unsprayed) class the row is named after.
    pub class_id: usize,
    pub name: String,
    pub sprayed_class_id: usize,
    pub gt_ul: f64,
    pub predicted_ul: f64,
    pub absolute_difference_ul: f64,
    pub hit_rate: f64,
    pub predicted_points: usize,
    pub gt_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepositionTable {
    pub model: String,
    pub fusion: String,
    pub method: String,
    pub classes: Vec<DepositionRow>,
    pub total_gt_ul: f64,
    pub total_predicted_ul: f64,
    pub total_absolute_difference_ul: f64,
    pub mean_hit_rate: f64,
    /// Class-image pairs whose affinity propagation hit the iteration cap.
    pub unconverged: usize,
}

pub fn deposition_table(
    model: &str,
    fusion: &str,
    method: &str,
    per_image: &[Vec<ClassCounts>],
    calib: &SprayerSpec,
    mode: HitRateMode,
    unconverged: usize,
) -> DepositionTable {
    let table = ClassTable::greenhouse();
    let report = deposition_report(per_image, calib, mode);
    let classes = report
        .classes
        .iter()
        .map(|c| {
            let base = table.base_of(c.class_id).unwrap_or(c.class_id);
            DepositionRow {
                class_id: base,
                name: table.name(base).unwrap_or_default().to_string(),
                sprayed_class_id: c.class_id,
                gt_ul: c.gt_ul,
                predicted_ul: c.predicted_ul,
                absolute_difference_ul: c.absolute_difference_ul,
                hit_rate: c.hit_rate,
                predicted_points: c.predicted_points,
                gt_points: c.gt_points,
            }
        })
        .collect();
    DepositionTable {
        model: model.to_string(),
        fusion: fusion.to_string(),
        method: method.to_string(),
        classes,
        total_gt_ul: report.total_gt_ul,
        total_predicted_ul: report.total_predicted_ul,
        total_absolute_difference_ul: report.total_absolute_difference_ul,
        mean_hit_rate: report.mean_hit_rate,
        unconverged,
    }
}

/// Coverage and deposition of one sprayed class in one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub image_id: String,
    pub fusion: String,
    pub class_id: usize,
    pub name: String,
    pub gt_cm2: f64,
    pub predicted_cm2: f64,
    pub gt_points: usize,
    pub predicted_points: usize,
    pub gt_ul: f64,
    pub predicted_ul: f64,
    pub hits: usize,
    pub misses: usize,
    pub hit_rate: f64,
}

pub fn coverage_row(
    image_id: &str,
    fusion: &str,
    gt: &LabelMask,
    pred: &LabelMask,
    counts: &ClassCounts,
    calib: &SprayerSpec,
) -> CoverageRow {
    let names = ClassTable::greenhouse();
    let class = counts.class_id as u8;
    let total = counts.hits + counts.misses;
    CoverageRow {
        image_id: image_id.to_string(),
        fusion: fusion.to_string(),
        class_id: counts.class_id,
        name: names.name(counts.class_id).unwrap_or_default().to_string(),
        gt_cm2: coverage(gt, class, calib),
        predicted_cm2: coverage(pred, class, calib),
        gt_points: counts.ground_truth,
        predicted_points: counts.predicted,
        gt_ul: estimate_deposition(counts.ground_truth, calib),
        predicted_ul: estimate_deposition(counts.predicted, calib),
        hits: counts.hits,
        misses: counts.misses,
        hit_rate: if total == 0 { 0.0 } else { counts.hits as f64 / total as f64 },
    }
}
