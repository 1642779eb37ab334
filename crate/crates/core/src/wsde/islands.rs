use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use super::KeyPoint;
use crate::cam::Cam;
use crate::error::{Error, Result};
use crate::tensor::{percentile, LabelMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// How the "top 10%" of a CAM is selected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum TopMode {
    /// `cam >= 90th percentile` of all CAM values.
    #[default]
    Percentile,
    /// `cam >= 0.9 × max(cam)`.
    Value,
}

impl TopMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TopMode::Percentile => "percentile",
            TopMode::Value => "value",
        }
    }
}

impl fmt::Display for TopMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "percentile" => Ok(TopMode::Percentile),
            "value" => Ok(TopMode::Value),
            other => Err(Error::Argument(format!("unknown top mode {other:?}"))),
        }
    }
}

/// A connected component of the thresholded CAM within the predicted class.
#[derive(Debug, Clone, PartialEq)]
pub struct Island {
    /// Row-major pixel indices in discovery order.
    pub pixels: Vec<usize>,
    pub centroid: (f64, f64),
}

impl Island {
    fn from_pixels(pixels: Vec<usize>, width: usize) -> Self {
        let n = pixels.len() as f64;
        let (sr, sc) = pixels
            .iter()
            .fold((0.0, 0.0), |(r, c), &p| (r + (p / width) as f64, c + (p % width) as f64));
        Self { pixels, centroid: (sr / n, sc / n) }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }

    /// Centroid rounded to the nearest pixel (halves away from zero).
    pub fn centre(&self) -> KeyPoint {
        KeyPoint::new(libm::round(self.centroid.0) as usize, libm::round(self.centroid.1) as usize)
    }
}

/// Connected components of a boolean grid, ordered by their first pixel in
/// row-major order.
pub fn label_components(mask: &[bool], height: usize, width: usize, conn: Connectivity) -> Vec<Vec<usize>> {
    assert_eq!(mask.len(), height * width, "mask size must match extents");
    let mut seen = vec![false; mask.len()];
    let mut components = Vec::new();
    let mut queue = VecDeque::new();
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(-1, 0), (1, 0), (0, -1), (0, 1)],
        Connectivity::Eight => &[(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)],
    };
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(p) = queue.pop_front() {
            pixels.push(p);
            let (r, c) = ((p / width) as isize, (p % width) as isize);
            for &(dr, dc) in offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= height as isize || nc >= width as isize {
                    continue;
                }
                let q = nr as usize * width + nc as usize;
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
        components.push(pixels);
    }
    components
}

/// 8-connected islands of `(cam in its top 10%) ∧ (pred == class_id)` with at
/// least `min_island_px` pixels.
pub fn extract_islands(
    cam: &Cam,
    pred: &LabelMask,
    class_id: usize,
    top_mode: TopMode,
    min_island_px: usize,
) -> Result<Vec<Island>> {
    let (h, w) = (cam.height(), cam.width());
    if (pred.height(), pred.width()) != (h, w) {
        return Err(Error::Contract(format!(
            "CAM is {h}x{w}, prediction is {}x{}",
            pred.height(),
            pred.width()
        )));
    }
    let values = cam.map().data();
    let threshold = match top_mode {
        TopMode::Percentile => percentile(values, 90.0)?,
        TopMode::Value => 0.9 * cam.map().max(),
    };
    let binary: Vec<bool> = values
        .iter()
        .zip(pred.labels())
        .map(|(&v, &l)| v >= threshold && usize::from(l) == class_id)
        .collect();
    Ok(label_components(&binary, h, w, Connectivity::Eight)
        .into_iter()
        .filter(|px| px.len() >= min_island_px)
        .map(|px| Island::from_pixels(px, w))
        .collect())
}

/// Mask with island `i` labelled `i + 1` (saturating at 255) and 0 elsewhere.
pub fn island_mask(islands: &[Island], height: usize, width: usize) -> LabelMask {
    let mut labels = vec![0u8; height * width];
    for (i, island) in islands.iter().enumerate() {
        let id = u8::try_from(i + 1).unwrap_or(u8::MAX);
        for &p in &island.pixels {
            labels[p] = id;
        }
    }
    LabelMask::new(height, width, labels).expect("extents come from a valid mask")
}
