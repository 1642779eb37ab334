//! Weakly supervised deposition estimation: CAM × prediction islands,
//! keypoint clustering, the keypoint pointing game, and deposition/coverage
//! arithmetic.

mod affinity;
mod deposition;
mod islands;
mod pointing;

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

pub use affinity::{cluster_affinity, AffinityOutcome, AffinityParams};
pub use deposition::{
    coverage, deposition_report, estimate_deposition, hit_miss_rate, ClassCounts, ClassDeposition,
    DepositionReport, HitRateMode,
};
pub use islands::{extract_islands, island_mask, label_components, Connectivity, Island, TopMode};
pub use pointing::{pointing_game, PointingResult};

/// Measured mean weight of one spray actuation, in μL.
pub const UNIT_DEPOSIT_UL: f64 = 20.9;
/// Measured standard deviation of one actuation, in μL (reported only).
pub const DEPOSIT_STD_UL: f64 = 0.16;
pub const DEFAULT_MIN_ISLAND_PX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyPoint {
    pub row: usize,
    pub col: usize,
}

impl KeyPoint {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn distance(&self, other: &KeyPoint) -> f64 {
        libm::sqrt(self.distance_sq(other))
    }

    pub fn distance_sq(&self, other: &KeyPoint) -> f64 {
        let dr = self.row as f64 - other.row as f64;
        let dc = self.col as f64 - other.col as f64;
        dr * dr + dc * dc
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyPointSet {
    pub class_id: usize,
    pub points: Vec<KeyPoint>,
}

/// Calibration constants of the sprayer and camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprayerSpec {
    pub unit_deposit_ul: f64,
    pub deposit_std_ul: f64,
    pub min_point_distance_px: f64,
    pub box_halfwidth_px: usize,
    pub cm2_per_pixel: f64,
}

impl SprayerSpec {
    /// Uses the calibrated unit deposit; geometry has no default.
    pub fn new(min_point_distance_px: f64, box_halfwidth_px: usize, cm2_per_pixel: f64) -> Result<Self> {
        Self {
            unit_deposit_ul: UNIT_DEPOSIT_UL,
            deposit_std_ul: DEPOSIT_STD_UL,
            min_point_distance_px,
            box_halfwidth_px,
            cm2_per_pixel,
        }
        .validated()
    }

    pub fn with_unit_deposit(mut self, unit_deposit_ul: f64) -> Result<Self> {
        self.unit_deposit_ul = unit_deposit_ul;
        self.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.unit_deposit_ul)
            || !positive(self.deposit_std_ul)
            || !positive(self.min_point_distance_px)
            || !positive(self.cm2_per_pixel)
            || self.box_halfwidth_px == 0
        {
            return Err(Error::Argument(format!("sprayer constants must be positive: {self:?}")));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ClusterMethod {
    /// One keypoint per island centroid.
    Centres,
    Affinity,
    /// Greedy minimum-distance suppression of island centres.
    Threshold,
}

impl ClusterMethod {
    pub const ALL: [ClusterMethod; 3] = [ClusterMethod::Centres, ClusterMethod::Affinity, ClusterMethod::Threshold];

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterMethod::Centres => "centres",
            ClusterMethod::Affinity => "affinity",
            ClusterMethod::Threshold => "threshold",
        }
    }
}

impl fmt::Display for ClusterMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "centres" | "centers" => Ok(ClusterMethod::Centres),
            "affinity" => Ok(ClusterMethod::Affinity),
            "threshold" => Ok(ClusterMethod::Threshold),
            other => Err(Error::Argument(format!("unknown clustering method {other:?}"))),
        }
    }
}

/// Island centroids rounded to the nearest pixel.
pub fn cluster_centres(islands: &[Island]) -> Vec<KeyPoint> {
    islands.iter().map(Island::centre).collect()
}

/// Greedy scan in row-major order keeping points at least `min_dist` from
/// every point already kept.
pub fn cluster_threshold(points: &[KeyPoint], min_dist: f64) -> Vec<KeyPoint> {
    let mut sorted = points.to_vec();
    sorted.sort();
    let mut kept: Vec<KeyPoint> = Vec::new();
    for p in sorted {
        if kept.iter().all(|k| k.distance(&p) >= min_dist) {
            kept.push(p);
        }
    }
    kept
}

/// Keypoints from islands with the chosen method; `converged` is false only
/// when affinity propagation hit its iteration cap.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub keypoints: KeyPointSet,
    pub converged: bool,
}

pub fn cluster(islands: &[Island], class_id: usize, method: ClusterMethod, calib: &SprayerSpec) -> Clustering {
    let centres = cluster_centres(islands);
    let (points, converged) = match method {
        ClusterMethod::Centres => (centres, true),
        ClusterMethod::Threshold => (cluster_threshold(&centres, calib.min_point_distance_px), true),
        ClusterMethod::Affinity if centres.is_empty() => (centres, true),
        ClusterMethod::Affinity => {
            let outcome = cluster_affinity(&centres, &AffinityParams::default())
                .expect("non-empty input is accepted");
            (outcome.exemplar_points(&centres), outcome.converged)
        }
    };
    Clustering { keypoints: KeyPointSet { class_id, points }, converged }
}
