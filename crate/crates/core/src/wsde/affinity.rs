//! Affinity propagation (clustering by passing messages between points).
//!
//! Similarities are negative squared Euclidean distances; the preference
//! defaults to the median off-diagonal similarity. A tiny deterministic
//! perturbation breaks the exact ties integer pixel coordinates produce.

use alloc::vec;
use alloc::vec::Vec;

use super::KeyPoint;
use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffinityParams {
    pub damping: f64,
    pub max_iter: usize,
    /// Iterations the exemplar set must stay unchanged to count as converged.
    pub convergence_iter: usize,
    /// Self-similarity; `None` uses the median off-diagonal similarity.
    pub preference: Option<f64>,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self { damping: 0.5, max_iter: 200, convergence_iter: 15, preference: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffinityOutcome {
    /// Indices of exemplar points, ascending.
    pub exemplars: Vec<usize>,
    /// Cluster index (into `exemplars`) of every point.
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl AffinityOutcome {
    pub fn exemplar_points(&self, points: &[KeyPoint]) -> Vec<KeyPoint> {
        self.exemplars.iter().map(|&i| points[i]).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

pub fn cluster_affinity(points: &[KeyPoint], params: &AffinityParams) -> Result<AffinityOutcome> {
    let n = points.len();
    if n == 0 {
        return Err(Error::Argument("affinity propagation needs at least one point".into()));
    }
    if n == 1 {
        return Ok(AffinityOutcome { exemplars: vec![0], labels: vec![0], iterations: 0, converged: true });
    }

    let mut s = vec![0.0f64; n * n];
    let mut off_diagonal = Vec::with_capacity(n * (n - 1));
    for i in 0..n {
        for k in 0..n {
            if i != k {
                s[i * n + k] = -points[i].distance_sq(&points[k]);
                off_diagonal.push(s[i * n + k]);
            }
        }
    }
    let preference = params.preference.unwrap_or_else(|| median(&mut off_diagonal));
    let all_equal = off_diagonal.iter().all(|&v| v == off_diagonal[0]);
    if all_equal && preference <= off_diagonal[0] {
        // every point equally similar to every other: a single cluster
        return Ok(AffinityOutcome { exemplars: vec![0], labels: vec![0; n], iterations: 0, converged: true });
    }
    for i in 0..n {
        s[i * n + i] = preference;
    }
    let mut rng = SplitMix64::new(0);
    for v in s.iter_mut() {
        let u = f64::from(rng.next_centered_f32()) * 2.0;
        *v += (f64::EPSILON * *v + f64::MIN_POSITIVE * 100.0) * u;
    }

    let d = params.damping;
    let window = params.convergence_iter.max(1);
    let mut r = vec![0.0f64; n * n];
    let mut a = vec![0.0f64; n * n];
    let mut history = vec![false; window * n];
    let mut is_exemplar = vec![false; n];
    let mut converged = false;
    let mut iterations = 0;

    for it in 0..params.max_iter {
        iterations = it + 1;
        for i in 0..n {
            let (mut first, mut best, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for k in 0..n {
                let v = a[i * n + k] + s[i * n + k];
                if v > best {
                    second = best;
                    best = v;
                    first = k;
                } else if v > second {
                    second = v;
                }
            }
            for k in 0..n {
                let competitor = if k == first { second } else { best };
                let update = s[i * n + k] - competitor;
                r[i * n + k] = d * r[i * n + k] + (1.0 - d) * update;
            }
        }
        for k in 0..n {
            let positive_sum: f64 =
                (0..n).map(|i| if i == k { r[k * n + k] } else { r[i * n + k].max(0.0) }).sum();
            for i in 0..n {
                let update = if i == k {
                    positive_sum - r[k * n + k]
                } else {
                    (positive_sum - r[i * n + k].max(0.0)).min(0.0)
                };
                a[i * n + k] = d * a[i * n + k] + (1.0 - d) * update;
            }
        }

        for k in 0..n {
            is_exemplar[k] = a[k * n + k] + r[k * n + k] > 0.0;
        }
        let slot = it % window;
        history[slot * n..(slot + 1) * n].copy_from_slice(&is_exemplar);
        if it + 1 >= window {
            let stable = (0..n).all(|k| {
                let count = (0..window).filter(|&j| history[j * n + k]).count();
                count == 0 || count == window
            });
            if stable && is_exemplar.iter().any(|&e| e) {
                converged = true;
                break;
            }
        }
    }

    let mut exemplars: Vec<usize> = (0..n).filter(|&k| is_exemplar[k]).collect();
    if exemplars.is_empty() {
        let best = (0..n)
            .max_by(|&x, &y| (a[x * n + x] + r[x * n + x]).total_cmp(&(a[y * n + y] + r[y * n + y])))
            .expect("n > 0");
        exemplars.push(best);
        converged = false;
    }

    // assign, then move each exemplar to its cluster's medoid and reassign
    let assign = |exemplars: &[usize]| -> Vec<usize> {
        (0..n)
            .map(|i| match exemplars.iter().position(|&e| e == i) {
                Some(own) => own,
                None => (0..exemplars.len())
                    .max_by(|&x, &y| s[i * n + exemplars[x]].total_cmp(&s[i * n + exemplars[y]]).then(y.cmp(&x)))
                    .expect("at least one exemplar"),
            })
            .collect()
    };
    let labels = assign(&exemplars);
    let mut refined: Vec<usize> = (0..exemplars.len())
        .map(|c| {
            let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
            *members
                .iter()
                .max_by(|&&x, &&y| {
                    let sx: f64 = members.iter().map(|&m| s[m * n + x]).sum();
                    let sy: f64 = members.iter().map(|&m| s[m * n + y]).sum();
                    sx.total_cmp(&sy).then(y.cmp(&x))
                })
                .expect("clusters contain their exemplar")
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();
    let labels = assign(&refined);
    Ok(AffinityOutcome { exemplars: refined, labels, iterations, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups(seed: u64) -> Vec<KeyPoint> {
        let mut rng = SplitMix64::new(seed);
        let mut jitter = || (rng.next_u64() % 3) as usize;
        let mut pts = Vec::new();
        for _ in 0..5 {
            pts.push(KeyPoint::new(20 + jitter(), 20 + jitter()));
        }
        for _ in 0..5 {
            pts.push(KeyPoint::new(20 + jitter(), 120 + jitter()));
        }
        pts
    }

    /// Best objective `Σ s(i, exemplar(i)) + |E|·pref` over all exemplar sets.
    fn exhaustive_best(points: &[KeyPoint]) -> Vec<usize> {
        let n = points.len();
        let mut off: Vec<f64> = Vec::new();
        for i in 0..n {
            for k in 0..n {
                if i != k {
                    off.push(-points[i].distance_sq(&points[k]));
                }
            }
        }
        let pref = median(&mut off);
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for subset in 1u32..(1 << n) {
            let ex: Vec<usize> = (0..n).filter(|&i| subset & (1 << i) != 0).collect();
            let mut total = pref * ex.len() as f64;
            for i in 0..n {
                if !ex.contains(&i) {
                    total += ex.iter().map(|&e| -points[i].distance_sq(&points[e])).fold(f64::NEG_INFINITY, f64::max);
                }
            }
            if total > best.0 {
                best = (total, ex);
            }
        }
        best.1
    }

    #[test]
    fn single_point() {
        let out = cluster_affinity(&[KeyPoint::new(3, 4)], &AffinityParams::default()).unwrap();
        assert_eq!(out.exemplars, vec![0]);
    }

    #[test]
    fn identical_points_collapse() {
        let pts = vec![KeyPoint::new(7, 7); 6];
        let out = cluster_affinity(&pts, &AffinityParams::default()).unwrap();
        assert_eq!(out.exemplars.len(), 1);
        assert!(out.labels.iter().all(|&l| l == 0));
    }

    #[test]
    fn empty_input() {
        assert!(cluster_affinity(&[], &AffinityParams::default()).is_err());
    }

    #[test]
    fn two_groups_two_exemplars() {
        for seed in 0..20 {
            let pts = two_groups(seed);
            let best = exhaustive_best(&pts);
            assert_eq!(best.len(), 2);
            assert!(best[0] < 5 && best[1] >= 5);
            let out = cluster_affinity(&pts, &AffinityParams::default()).unwrap();
            assert!(out.converged);
            assert_eq!(out.exemplars.len(), 2, "seed {seed}");
            assert!(out.exemplars[0] < 5 && out.exemplars[1] >= 5);
            assert_eq!(&out.labels[..5], &[0; 5]);
            assert_eq!(&out.labels[5..], &[1; 5]);
        }
    }
}
