use alloc::vec;
use alloc::vec::Vec;

use super::KeyPoint;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointingResult {
    pub hits: usize,
    pub misses: usize,
    /// `hits / (hits + misses)`, 0 without predictions.
    pub accuracy: f64,
}

impl PointingResult {
    pub fn from_counts(hits: usize, misses: usize) -> Self {
        let total = hits + misses;
        let accuracy = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
        Self { hits, misses, accuracy }
    }
}

fn inside(pred: &KeyPoint, centre: &KeyPoint, half: usize) -> bool {
    pred.row.abs_diff(centre.row) <= half && pred.col.abs_diff(centre.col) <= half
}

/// Pointing game with one `(2h+1)²` box per ground-truth point.
///
/// Each box absorbs at most one prediction. Pairs are matched greedily by
/// ascending distance to the box centre, then augmenting paths recover any
/// hit the greedy pass missed, so the hit count is the maximum possible.
/// Every unmatched prediction is a miss.
pub fn pointing_game(pred: &[KeyPoint], gt: &[KeyPoint], box_halfwidth: usize) -> PointingResult {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); pred.len()];
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gt.iter().enumerate() {
            if inside(p, g, box_halfwidth) {
                candidates.push((p.distance_sq(g), i, j));
                adjacency[i].push(j);
            }
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    for (i, adj) in adjacency.iter_mut().enumerate() {
        adj.sort_by(|&x, &y| pred[i].distance_sq(&gt[x]).total_cmp(&pred[i].distance_sq(&gt[y])).then(x.cmp(&y)));
    }

    let mut pred_match: Vec<Option<usize>> = vec![None; pred.len()];
    let mut gt_match: Vec<Option<usize>> = vec![None; gt.len()];
    for &(_, i, j) in &candidates {
        if pred_match[i].is_none() && gt_match[j].is_none() {
            pred_match[i] = Some(j);
            gt_match[j] = Some(i);
        }
    }

    for i in 0..pred.len() {
        if pred_match[i].is_none() {
            let mut visited = vec![false; gt.len()];
            augment(i, &adjacency, &mut visited, &mut pred_match, &mut gt_match);
        }
    }

    let hits = pred_match.iter().filter(|m| m.is_some()).count();
    PointingResult::from_counts(hits, pred.len() - hits)
}

fn augment(
    i: usize,
    adjacency: &[Vec<usize>],
    visited: &mut [bool],
    pred_match: &mut [Option<usize>],
    gt_match: &mut [Option<usize>],
) -> bool {
    for &j in &adjacency[i] {
        if visited[j] {
            continue;
        }
        visited[j] = true;
        let free = match gt_match[j] {
            None => true,
            Some(other) => augment(other, adjacency, visited, pred_match, gt_match),
        };
        if free {
            pred_match[i] = Some(j);
            gt_match[j] = Some(i);
            return true;
        }
    }
    false
}
