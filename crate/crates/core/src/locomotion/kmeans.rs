use rand::Rng;

use super::{LocoError, TransitionDataset};

const MAX_ITERATIONS: usize = 100;
const SHIFT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, recorded after every
    /// Lloyd update. Non-increasing.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// Nearest centroid, ties to the lowest index.
fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // all remaining mass is on existing centroids
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
pub fn kmeans(points: &[Vec<f64>], k: usize, rng: &mut impl Rng) -> Result<KMeansResult, LocoError> {
    if k == 0 || k > points.len() {
        return Err(LocoError::Argument(format!(
            "k must be in 1..={}, got {k}",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut centroids = plus_plus_init(points, k, rng);
    let mut assignment = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(p, &centroids).0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        let mut shift: f64 = 0.0;
        for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
            // an empty cluster keeps its centroid
            if n > 0 {
                let new: Vec<f64> = s.into_iter().map(|v| v / n as f64).collect();
                shift = shift.max(sq_dist(c, &new).sqrt());
                *c = new;
            }
        }
        objective.push(
            assignment
                .iter()
                .zip(points)
                .map(|(&a, p)| sq_dist(p, &centroids[a]))
                .sum(),
        );
        if shift <= SHIFT_TOL {
            break;
        }
    }
    Ok(KMeansResult {
        centroids,
        assignment,
        objective,
        iterations,
    })
}

/// Keeps one dataset member per k-means cluster: the member nearest each
/// centroid, taken in centroid order and skipping members already chosen, so
/// exactly `k` distinct transitions survive. Clustering runs on standardized
/// `(s, a)`. The returned indices are sorted.
pub fn kmeans_filter(
    data: &TransitionDataset,
    k: usize,
    rng: &mut impl Rng,
) -> Result<(TransitionDataset, Vec<usize>, KMeansResult), LocoError> {
    if k == 0 || k > data.len() {
        return Err(LocoError::Argument(format!(
            "filter size must be in 1..={}, got {k}",
            data.len()
        )));
    }
    let st = &data.stats().inputs;
    let points: Vec<Vec<f64>> = data.transitions().iter().map(|t| st.normalize(&t.input())).collect();
    let res = kmeans(&points, k, rng)?;
    let mut taken = vec![false; points.len()];
    let mut keep = Vec::with_capacity(k);
    for c in &res.centroids {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, p) in points.iter().enumerate() {
            if !taken[i] {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (i, d);
                }
            }
        }
        taken[best.0] = true;
        keep.push(best.0);
    }
    keep.sort_unstable();
    Ok((data.select(&keep), keep, res))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locomotion::{collect_rollout, random_action, State, Transition};
    use crate::seeded_rng;

    #[test]
    fn identical_points_single_cluster() {
        let t = Transition {
            s: [0.1, 0.0, 0.2, 0.0, 0.0, 0.0],
            a: [0.5; 4],
            s_next: [0.0; 6],
        };
        let d = TransitionDataset::new(vec![t; 4]);
        let (f, idx, _) = kmeans_filter(&d, 1, &mut seeded_rng(1)).unwrap();
        assert_eq!(f.transitions(), &[t]);
        assert_eq!(idx.len(), 1);
    }

    #[test]
    fn k_bounds() {
        let d = TransitionDataset::new(vec![
            Transition {
                s: [0.0; 6],
                a: [0.0; 4],
                s_next: [0.0; 6]
            };
            3
        ]);
        assert!(kmeans_filter(&d, 4, &mut seeded_rng(1)).is_err());
        assert!(kmeans_filter(&d, 0, &mut seeded_rng(1)).is_err());
        // duplicates still yield k distinct members
        let (f, idx, _) = kmeans_filter(&d, 3, &mut seeded_rng(1)).unwrap();
        assert_eq!((f.len(), idx), (3, vec![0, 1, 2]));
    }

    #[test]
    fn separated_blobs_found() {
        let mut rng = seeded_rng(2);
        let centres = [[-10.0, 0.0], [0.0, 10.0], [10.0, 0.0]];
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|i| {
                let c = centres[i % 3];
                vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]
            })
            .collect();
        let res = kmeans(&pts, 3, &mut seeded_rng(3)).unwrap();
        for i in 0..300 {
            assert_eq!(res.assignment[i], res.assignment[i % 3]);
        }
        let mut labels = res.assignment[..3].to_vec();
        labels.sort();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn objective_trace_non_increasing_and_subset() {
        let policy = |_: &State, rng: &mut crate::SeededRng| random_action(rng);
        let d = collect_rollout(policy, 600, &mut seeded_rng(4)).unwrap();
        let (f, idx, res) = kmeans_filter(&d, 60, &mut seeded_rng(5)).unwrap();
        assert_eq!(f.len(), 60);
        assert!(res.objective.windows(2).all(|w| w[1] <= w[0]), "{:?}", res.objective);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        for (t, &i) in f.transitions().iter().zip(&idx) {
            assert_eq!(*t, d.transitions()[i]);
        }
        let again = kmeans_filter(&d, 60, &mut seeded_rng(5)).unwrap();
        assert_eq!(again.1, idx);
    }
}
