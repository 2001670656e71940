//! k-means with D²-weighted seeding and Lloyd iterations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_MAX_ITERS: usize = 100;

#[derive(Clone, Debug)]
pub struct KMeans<T> {
    /// `k × C` centroids.
    pub centroids: Tensor<T>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances after each assignment step.
    pub objective: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
}

/// Clusters the rows of `points` (`M × C`). Assignment ties go to the lowest
/// centroid index; a cluster that empties is re-seeded with the point farthest
/// from its current centroid.
pub fn kmeans<T: Scalar>(points: &Tensor<T>, k: usize, seed: u64, max_iters: usize) -> Result<KMeans<T>> {
    if points.rank() != 2 {
        return Err(Error::shape("kmeans", format!("points must be M x C, got {:?}", points.shape())));
    }
    let (m, c) = (points.shape()[0], points.shape()[1]);
    if k == 0 || m < k {
        return Err(Error::InvalidArgument(format!("kmeans needs 1 <= k <= M, got k={k}, M={m}")));
    }
    let row = |i: usize| &points.data()[i * c..(i + 1) * c];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // D² seeding.
    let mut centroids: Vec<Vec<T>> = vec![row(rng.random_range(0..m)).to_vec()];
    let mut d2: Vec<T> = (0..m).map(|i| sq_dist(row(i), &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().map(|v| v.to_f64_lossy()).sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = m - 1;
            for (i, v) in d2.iter().enumerate() {
                target -= v.to_f64_lossy();
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..m)
        };
        let cen = row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(row(i), &cen));
        }
        centroids.push(cen);
    }

    let mut assignments = vec![usize::MAX; m];
    let mut objective = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let mut changed = false;
        let mut obj = T::zero();
        for (i, slot) in assignments.iter_mut().enumerate() {
            let (best, dist) = nearest(row(i), &centroids);
            if *slot != best {
                *slot = best;
                changed = true;
            }
            obj = obj + dist;
        }
        objective.push(obj);
        if !changed {
            converged = true;
            break;
        }
        // Update step.
        let mut sums = vec![vec![T::zero(); c]; k];
        let mut counts = vec![0usize; k];
        for (i, &a) in assignments.iter().enumerate() {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(row(i)) {
                *s = *s + v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let n = T::from_usize_lossy(counts[j]);
                centroids[j] = sums[j].iter().map(|&s| s / n).collect();
            }
        }
        if counts.contains(&0) {
            let mut own: Vec<T> = (0..m).map(|i| sq_dist(row(i), &centroids[assignments[i]])).collect();
            for j in (0..k).filter(|&j| counts[j] == 0) {
                let far = (0..m).fold(0, |best, i| if own[i] > own[best] { i } else { best });
                centroids[j] = row(far).to_vec();
                own[far] = T::neg_infinity();
            }
        }
    }

    let flat: Vec<T> = centroids.into_iter().flatten().collect();
    Ok(KMeans { centroids: Tensor::from_raw(vec![k, c], flat), assignments, objective, iterations, converged })
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

fn nearest<T: Scalar>(p: &[T], centroids: &[Vec<T>]) -> (usize, T) {
    let mut best = (0, sq_dist(p, &centroids[0]));
    for (j, c) in centroids.iter().enumerate().skip(1) {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_cluster_is_global_mean() {
        let pts = Tensor::new([4, 2], vec![0.0, 0.0, 2.0, 0.0, 0.0, 4.0, 2.0, 4.0]).unwrap();
        let km = kmeans(&pts, 1, 3, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(km.centroids.data(), &[1.0, 2.0]);
        assert!(km.converged);
    }

    #[test]
    fn too_few_points() {
        let pts = Tensor::<f64>::zeros([2, 3]);
        assert!(kmeans(&pts, 3, 0, 10).is_err());
        assert!(kmeans(&pts, 0, 0, 10).is_err());
    }

    #[test]
    fn duplicate_points_do_not_break_seeding() {
        let pts = Tensor::<f64>::full([5, 2], 1.5);
        let km = kmeans(&pts, 3, 9, 10).unwrap();
        assert!(km.centroids.data().iter().all(|&v| v == 1.5));
    }
}
