//! Class-wise Dice, IoU, pixel accuracy and micro F1 from pixel counts.
//!
//! Classes absent from both prediction and ground truth are not applicable
//! (`None`) and are left out of every average. Aggregates skip the background
//! class unless asked otherwise.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

use crate::error::{Error, Result};
use crate::tensor::LabelMask;

/// Per-class pixel counts; `tp[c] + fn_[c]` is the ground-truth total of `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionTally {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionTally {
    pub fn zeros(num_classes: usize) -> Self {
        Self { tp: vec![0; num_classes], fp: vec![0; num_classes], fn_: vec![0; num_classes] }
    }

    pub fn num_classes(&self) -> usize {
        self.tp.len()
    }

    /// Correctly classified pixels of class `c`.
    pub fn correct(&self, c: usize) -> u64 {
        self.tp[c]
    }

    pub fn total_gt(&self, c: usize) -> u64 {
        self.tp[c] + self.fn_[c]
    }

    /// Present in prediction or ground truth.
    pub fn is_present(&self, c: usize) -> bool {
        self.tp[c] + self.fp[c] + self.fn_[c] > 0
    }

    fn classes(&self, include_background: bool) -> core::ops::Range<usize> {
        usize::from(!include_background)..self.num_classes()
    }
}

impl Add for ConfusionTally {
    type Output = ConfusionTally;

    fn add(mut self, rhs: ConfusionTally) -> ConfusionTally {
        self += &rhs;
        self
    }
}

impl AddAssign<&ConfusionTally> for ConfusionTally {
    fn add_assign(&mut self, rhs: &ConfusionTally) {
        assert_eq!(self.num_classes(), rhs.num_classes(), "tallies over different class sets");
        for c in 0..self.num_classes() {
            self.tp[c] += rhs.tp[c];
            self.fp[c] += rhs.fp[c];
            self.fn_[c] += rhs.fn_[c];
        }
    }
}

pub fn tally(pred: &LabelMask, gt: &LabelMask, num_classes: usize) -> Result<ConfusionTally> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Contract(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    for (name, mask) in [("prediction", pred), ("ground truth", gt)] {
        if let Some((i, l)) = mask.first_invalid(num_classes) {
            return Err(Error::Argument(format!("{name} label {l} at pixel {i} out of range")));
        }
    }
    let mut t = ConfusionTally::zeros(num_classes);
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        let (p, g) = (usize::from(p), usize::from(g));
        if p == g {
            t.tp[p] += 1;
        } else {
            t.fp[p] += 1;
            t.fn_[g] += 1;
        }
    }
    Ok(t)
}

pub fn dice_per_class(t: &ConfusionTally) -> Vec<Option<f64>> {
    (0..t.num_classes())
        .map(|c| {
            t.is_present(c).then(|| {
                2.0 * t.tp[c] as f64 / (2 * t.tp[c] + t.fp[c] + t.fn_[c]) as f64
            })
        })
        .collect()
}

pub fn iou_per_class(t: &ConfusionTally) -> Vec<Option<f64>> {
    (0..t.num_classes())
        .map(|c| {
            t.is_present(c)
                .then(|| t.tp[c] as f64 / (t.tp[c] + t.fp[c] + t.fn_[c]) as f64)
        })
        .collect()
}

/// Mean IoU over present classes; `None` when no class is present.
pub fn miou(t: &ConfusionTally, include_background: bool) -> Option<f64> {
    let ious = iou_per_class(t);
    let present: Vec<f64> = t.classes(include_background).filter_map(|c| ious[c]).collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// `TP_c / GT_c`; not applicable when the class has no ground-truth pixels.
pub fn pixel_accuracy_per_class(t: &ConfusionTally) -> Vec<Option<f64>> {
    (0..t.num_classes())
        .map(|c| {
            let gt = t.total_gt(c);
            (gt > 0).then(|| t.tp[c] as f64 / gt as f64)
        })
        .collect()
}

/// F1 from TP/FP/FN summed over classes (background excluded unless asked).
pub fn micro_f1(t: &ConfusionTally, include_background: bool) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for c in t.classes(include_background) {
        tp += t.tp[c];
        fp += t.fp[c];
        fn_ += t.fn_[c];
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Number of classes (in the aggregate range) that are not applicable.
pub fn excluded_classes(t: &ConfusionTally, include_background: bool) -> usize {
    t.classes(include_background).filter(|&c| !t.is_present(c)).count()
}
