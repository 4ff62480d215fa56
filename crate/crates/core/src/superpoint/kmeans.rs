//! Weighted Lloyd's K-Means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const MAX_ITERS: usize = 100;
/// Relative drop in inertia below which Lloyd's loop stops.
pub const REL_TOL: f64 = 1e-4;

/// A converged K-Means run.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Nearest-centroid label per input point, against the final centroids.
    pub labels: Vec<usize>,
    /// Weighted within-cluster sum of squared distances.
    pub inertia: f64,
    pub iterations: usize,
}

/// Unweighted K-Means (all weights 1).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansFit> {
    kmeans_weighted(points, &vec![1.0; points.len()], k, seed)
}

/// Weighted K-Means: k-means++ initialization, Lloyd iteration capped at
/// [`MAX_ITERS`] with relative inertia tolerance [`REL_TOL`].
///
/// Clusters that empty out are reseeded at the point farthest from the empty
/// centroid's previous position. Labels are recomputed against the final
/// centroids before returning, so `labels[i]` is always the nearest final
/// centroid (ties to the lowest index). Deterministic for a fixed seed.
pub fn kmeans_weighted(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    seed: u64,
) -> Result<KMeansFit> {
    validate(points, weights, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeanspp_init(points, weights, k, &mut rng);
    let mut labels = vec![0usize; points.len()];
    let mut prev_inertia = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..MAX_ITERS {
        iterations += 1;
        assign(points, &centroids, &mut labels);
        let inertia = inertia_of(points, weights, &centroids, &labels);
        let reseeded = update(points, weights, k, &labels, &mut centroids);
        if !reseeded && prev_inertia.is_finite() {
            let drop = prev_inertia - inertia;
            if drop <= REL_TOL * prev_inertia.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        prev_inertia = inertia;
    }

    assign(points, &centroids, &mut labels);
    let inertia = inertia_of(points, weights, &centroids, &labels);
    Ok(KMeansFit {
        centroids,
        labels,
        inertia,
        iterations,
    })
}

fn validate(points: &[Vec<f64>], weights: &[f64], k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::Param(format!(
            "{} points cannot support k = {k}",
            points.len()
        )));
    }
    if weights.len() != points.len() {
        return Err(Error::Param("weights/points length mismatch".into()));
    }
    if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
        return Err(Error::Param("weights must be positive and finite".into()));
    }
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Param("points must share a positive dimension".into()));
    }
    Ok(())
}

pub(super) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Sample an index with probability proportional to `mass` (cumulative walk).
fn weighted_pick(mass: &[f64], total: f64, rng: &mut ChaCha8Rng) -> usize {
    let r = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &m) in mass.iter().enumerate() {
        acc += m;
        if r < acc {
            return i;
        }
    }
    // Float round-off can leave r just past the last step.
    mass.len() - 1
}

/// k-means++ seeding: first centroid by weight, then D²·weight sampling.
pub(super) fn kmeanspp_init(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<f64>> {
    let total_w: f64 = weights.iter().sum();
    let first = weighted_pick(weights, total_w, rng);
    let mut centroids = vec![points[first].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| dist2(p, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let mass: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let total: f64 = mass.iter().sum();
        let pick = if total > 0.0 {
            weighted_pick(&mass, total, rng)
        } else {
            // All points coincide with a centroid; fall back to weight-only.
            weighted_pick(weights, total_w, rng)
        };
        centroids.push(points[pick].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(dist2(p, centroids.last().expect("pushed")));
        }
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) {
    for (i, p) in points.iter().enumerate() {
        let mut best = 0;
        let mut best_d = dist2(p, &centroids[0]);
        for (c, centroid) in centroids.iter().enumerate().skip(1) {
            let d = dist2(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        labels[i] = best;
    }
}

/// Recompute centroids as weighted means. Returns true if any empty cluster
/// was reseeded (at the point farthest from its previous position).
fn update(
    points: &[Vec<f64>],
    weights: &[f64],
    k: usize,
    labels: &[usize],
    centroids: &mut [Vec<f64>],
) -> bool {
    let dim = points[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut mass = vec![0.0; k];
    for (i, p) in points.iter().enumerate() {
        let c = labels[i];
        mass[c] += weights[i];
        for d in 0..dim {
            sums[c][d] += weights[i] * p[d];
        }
    }
    let mut reseeded = false;
    for c in 0..k {
        if mass[c] > 0.0 {
            for d in 0..dim {
                centroids[c][d] = sums[c][d] / mass[c];
            }
        } else {
            let far = points
                .iter()
                .enumerate()
                .max_by(|(_, a), (_, b)| {
                    dist2(a, &centroids[c]).total_cmp(&dist2(b, &centroids[c]))
                })
                .map(|(i, _)| i)
                .expect("points non-empty");
            centroids[c] = points[far].clone();
            reseeded = true;
        }
    }
    reseeded
}

fn inertia_of(
    points: &[Vec<f64>],
    weights: &[f64],
    centroids: &[Vec<f64>],
    labels: &[usize],
) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| weights[i] * dist2(p, &centroids[labels[i]]))
        .sum()
}
