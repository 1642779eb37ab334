//! Deletion and Insertion curves under most-relevant-first ordering with
//! zero imputation, and their trapezoidal area under the curve.

use alloc::vec::Vec;
use core::fmt;

use crate::cam::{fused_score, Baseline, Cam};
use crate::engine::{AblationRequest, InferenceEngine};
use crate::error::{Error, Result};
use crate::fusion::Fusion;
use crate::tensor::Tensor;

/// Number of samples per curve: 0%, 1%, …, 100%.
pub const CURVE_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    Deletion,
    Insertion,
}

impl CurveKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CurveKind::Deletion => "deletion",
            CurveKind::Insertion => "insertion",
        }
    }
}

impl fmt::Display for CurveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaithfulnessCurve {
    kind: CurveKind,
    confidences: Vec<f64>,
}

impl FaithfulnessCurve {
    /// Curves with 101 samples on the evenly spaced fraction axis.
    pub fn new(kind: CurveKind, confidences: Vec<f64>) -> Result<Self> {
        if confidences.len() != CURVE_POINTS {
            return Err(Error::Argument(alloc::format!(
                "a curve has {CURVE_POINTS} samples, got {}",
                confidences.len()
            )));
        }
        if confidences.iter().any(|c| !c.is_finite()) {
            return Err(Error::Argument("curve confidences must be finite".into()));
        }
        Ok(Self { kind, confidences })
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    pub fn confidences(&self) -> &[f64] {
        &self.confidences
    }

    pub fn fractions(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.confidences.len()).map(|i| i as f64 / (CURVE_POINTS - 1) as f64)
    }
}

/// Pixel indices sorted by descending saliency; ties keep row-major order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MorfOrder(Vec<usize>);

impl MorfOrder {
    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn morf_order(cam: &Cam) -> MorfOrder {
    saliency_order(cam.map().data())
}

/// MoRF order over a raw saliency plane.
pub fn saliency_order(values: &[f32]) -> MorfOrder {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps ascending index among equal values
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    MorfOrder(order)
}

/// Pixels perturbed at step `i` of 100 for an image of `n` pixels.
fn pixels_at_step(step: usize, n: usize) -> usize {
    step * n / (CURVE_POINTS - 1)
}

/// Zeroes pixels in MoRF order, 1% of the image per step.
pub fn deletion_curve<E: InferenceEngine + ?Sized>(
    engine: &E,
    image: &Tensor,
    cam: &Cam,
    class_id: usize,
    fusion: impl Into<Fusion>,
) -> Result<FaithfulnessCurve> {
    perturbation_curve(engine, image, cam, class_id, fusion.into(), CurveKind::Deletion)
}

/// Restores pixels in MoRF order onto a black image, 1% per step.
pub fn insertion_curve<E: InferenceEngine + ?Sized>(
    engine: &E,
    image: &Tensor,
    cam: &Cam,
    class_id: usize,
    fusion: impl Into<Fusion>,
) -> Result<FaithfulnessCurve> {
    perturbation_curve(engine, image, cam, class_id, fusion.into(), CurveKind::Insertion)
}

fn perturbation_curve<E: InferenceEngine + ?Sized>(
    engine: &E,
    image: &Tensor,
    cam: &Cam,
    class_id: usize,
    fusion: Fusion,
    kind: CurveKind,
) -> Result<FaithfulnessCurve> {
    let (colors, h, w) = image.dims();
    if image.rank() != 3 || (cam.height(), cam.width()) != (h, w) {
        return Err(Error::Contract(alloc::format!(
            "CAM is {}x{}, image is {:?}",
            cam.height(),
            cam.width(),
            image.shape()
        )));
    }
    let base = Baseline::compute(engine, image, class_id, fusion)?;
    let order = morf_order(cam);
    let hw = h * w;
    let source = image.data();
    let mut current = match kind {
        CurveKind::Deletion => source.to_vec(),
        CurveKind::Insertion => alloc::vec![0.0; source.len()],
    };

    let mut confidences = Vec::with_capacity(CURVE_POINTS);
    let mut done = 0;
    for step in 0..CURVE_POINTS {
        let target = pixels_at_step(step, hw);
        for &p in &order.as_slice()[done..target] {
            for c in 0..colors {
                current[c * hw + p] = match kind {
                    CurveKind::Deletion => 0.0,
                    CurveKind::Insertion => source[c * hw + p],
                };
            }
        }
        done = target;
        let unperturbed = match kind {
            CurveKind::Deletion => step == 0,
            CurveKind::Insertion => step == CURVE_POINTS - 1,
        };
        let score = if unperturbed {
            base.score
        } else {
            let perturbed = Tensor::new(image.shape().to_vec(), current.clone())?;
            fused_score(engine, &perturbed, &AblationRequest::none(), &base.region, fusion)?
        };
        confidences.push(score);
    }
    FaithfulnessCurve::new(kind, confidences)
}

/// Trapezoidal area under the curve on the normalized `[0, 1]` fraction axis.
pub fn auc(curve: &FaithfulnessCurve) -> f64 {
    trapezoid(curve.confidences())
}

/// `h/2 [y0 + 2(y1 + … + y(n-1)) + yn]` with `h = 1/(len-1)`.
pub fn trapezoid(ys: &[f64]) -> f64 {
    match ys {
        [] => 0.0,
        [y] => *y,
        [first, inner @ .., last] => {
            let h = 1.0 / (ys.len() - 1) as f64;
            h / 2.0 * (first + 2.0 * inner.iter().sum::<f64>() + last)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassAverage {
    pub mean_deletion: f64,
    pub mean_insertion: f64,
    /// Deletion strictly below Insertion.
    pub interpretable: bool,
}

impl ClassAverage {
    pub fn difference(&self) -> f64 {
        self.mean_insertion - self.mean_deletion
    }
}

/// Means of per-class `(deletion AUC, insertion AUC)` pairs.
pub fn class_averaged_scores(per_class: &[(f64, f64)]) -> Result<ClassAverage> {
    if per_class.is_empty() {
        return Err(Error::NoClasses);
    }
    let n = per_class.len() as f64;
    let mean_deletion = per_class.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_insertion = per_class.iter().map(|p| p.1).sum::<f64>() / n;
    Ok(ClassAverage { mean_deletion, mean_insertion, interpretable: mean_deletion < mean_insertion })
}
