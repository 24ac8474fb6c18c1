use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each Lloyd iteration of the retained restart.
    pub history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center (ties go to the lowest index).
pub fn nearest(centers: &[Vec<f64>], p: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = dist2(c, p);
        if d < best.1 {
            best = (j, d);
        }
    }
    best.0
}

pub fn assign(centers: &[Vec<f64>], points: &[Vec<f64>]) -> Vec<usize> {
    points.iter().map(|p| nearest(centers, p)).collect()
}

fn plus_plus(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = d2.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centers.push(points[idx].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> KMeans {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = assign(&centers, points);
    let mut history = Vec::new();
    for _ in 0..MAX_ITER {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // Re-seed from the point farthest from its current center.
                let far = points
                    .iter()
                    .zip(&labels)
                    .enumerate()
                    .map(|(i, (p, &l))| (i, dist2(p, &centers[l])))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                centers[j] = points[far].clone();
                labels[far] = j;
            } else {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            }
        }
        let next = assign(&centers, points);
        let inertia: f64 = points.iter().zip(&next).map(|(p, &l)| dist2(p, &centers[l])).sum();
        history.push(inertia);
        let settled = next == labels;
        labels = next;
        if settled {
            break;
        }
    }
    let inertia = *history.last().unwrap_or(&0.0);
    KMeans { centers, labels, inertia, history }
}

/// Lloyd's algorithm with k-means++ seeding; best of `n_init` restarts.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64, n_init: usize) -> Result<KMeans> {
    if points.is_empty() {
        return Err(Error::Empty("k-means input"));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape { context: "k-means points", expected: dim, got: 0 });
    }
    let mut distinct: Vec<&Vec<f64>> = points.iter().collect();
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    distinct.dedup();
    if k == 0 || k > distinct.len() {
        return Err(Error::Config(format!(
            "k = {k} must be between 1 and the {} distinct points",
            distinct.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..n_init.max(1) {
        let run = lloyd(points, plus_plus(points, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use rand_distr::{Distribution, Normal};

    use super::*;

    fn blobs(seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, 0.3).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, (cx, cy)) in [(-3.0, 0.0), (3.0, 1.0)].iter().enumerate() {
            for _ in 0..200 {
                pts.push(vec![cx + d.sample(&mut rng), cy + d.sample(&mut rng)]);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn one_cluster_is_the_mean() {
        let (pts, _) = blobs(1);
        let r = kmeans(&pts, 1, 0, 1).unwrap();
        for j in 0..2 {
            let mean = pts.iter().map(|p| p[j]).sum::<f64>() / pts.len() as f64;
            assert!((r.centers[0][j] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn separated_blobs_are_pure() {
        let (pts, truth) = blobs(2);
        let r = kmeans(&pts, 2, 5, 3).unwrap();
        let flip = r.labels[0] != truth[0];
        for (l, t) in r.labels.iter().zip(&truth) {
            assert_eq!(*l != *t, flip);
        }
    }

    #[test]
    fn inertia_history_and_k_monotone() {
        let (pts, _) = blobs(3);
        let r2 = kmeans(&pts, 2, 1, 4).unwrap();
        let r5 = kmeans(&pts, 5, 1, 4).unwrap();
        assert!(r5.inertia <= r2.inertia);
        for w in r5.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9);
        }
        assert_eq!(kmeans(&pts, 5, 1, 4).unwrap(), r5);
    }

    #[test]
    fn too_many_clusters() {
        let pts = vec![vec![1.0], vec![1.0], vec![2.0]];
        assert!(kmeans(&pts, 3, 0, 1).is_err());
        assert!(kmeans(&pts, 2, 0, 1).is_ok());
    }
}
