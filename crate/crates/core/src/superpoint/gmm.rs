//! Diagonal-covariance Gaussian mixtures fitted by EM, plus weighted sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::kmeans::kmeanspp_init;
use crate::error::{Error, Result};

pub const MAX_ITERS: usize = 100;
/// Absolute log-likelihood change below which EM stops.
pub const LL_TOL: f64 = 1e-4;
/// Per-dimension variance floor, preventing singular components.
pub const COV_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_6;

/// A fitted diagonal-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct GmmFit {
    /// Mixing proportions, summing to 1.
    pub mix: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Per-component, per-dimension variances (floored at [`COV_FLOOR`]).
    pub vars: Vec<Vec<f64>>,
    pub loglik: f64,
    pub iterations: usize,
}

impl GmmFit {
    /// Mixture density at `x`, clamped away from zero so downstream weights
    /// stay positive.
    pub fn density(&self, x: &[f64]) -> f64 {
        let mut logs = Vec::with_capacity(self.mix.len());
        for j in 0..self.mix.len() {
            logs.push(self.mix[j].ln() + log_normal_diag(x, &self.means[j], &self.vars[j]));
        }
        log_sum_exp(&logs).exp().max(1e-300)
    }

    /// Draw `per_component` samples from each component in order, returning
    /// `(sample, mixture density)` pairs. Deterministic for a fixed seed.
    pub fn sample(&self, per_component: usize, seed: u64) -> Vec<(Vec<f64>, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = self.means[0].len();
        let mut out = Vec::with_capacity(per_component * self.mix.len());
        for j in 0..self.mix.len() {
            for _ in 0..per_component {
                let mut x = Vec::with_capacity(dim);
                for d in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x.push(self.means[j][d] + self.vars[j][d].sqrt() * z);
                }
                let density = self.density(&x);
                out.push((x, density));
            }
        }
        out
    }
}

fn log_normal_diag(x: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let mut acc = 0.0;
    for d in 0..x.len() {
        let diff = x[d] - mean[d];
        acc += -0.5 * (LN_2PI + var[d].ln()) - diff * diff / (2.0 * var[d]);
    }
    acc
}

fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

/// Fit a k-component diagonal GMM with EM.
///
/// Initialization: k-means++ picks for the means, the global per-dimension
/// variance for every component, uniform mixing. Convergence when the
/// log-likelihood moves less than [`LL_TOL`]. A component whose posterior
/// mass collapses (or a non-finite likelihood) aborts with
/// [`Error::Degenerate`] — callers fall back to the K-Means variant.
#[allow(clippy::needless_range_loop)] // index loops mirror the update equations
pub fn fit_gmm(points: &[Vec<f64>], k: usize, seed: u64) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::Param("k must be >= 1".into()));
    }
    if points.len() < k {
        return Err(Error::Param(format!(
            "{} points cannot support k = {k} components",
            points.len()
        )));
    }
    let n = points.len();
    let dim = points[0].len();
    if dim == 0 || points.iter().any(|p| p.len() != dim) {
        return Err(Error::Param("points must share a positive dimension".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means_init = kmeanspp_init(points, &vec![1.0; n], k, &mut rng);
    let mut global_var = vec![0.0; dim];
    let mut global_mean = vec![0.0; dim];
    for p in points {
        for d in 0..dim {
            global_mean[d] += p[d] / n as f64;
        }
    }
    for p in points {
        for d in 0..dim {
            let diff = p[d] - global_mean[d];
            global_var[d] += diff * diff / n as f64;
        }
    }
    for v in &mut global_var {
        *v = v.max(COV_FLOOR);
    }

    let mut fit = GmmFit {
        mix: vec![1.0 / k as f64; k],
        means: means_init,
        vars: vec![global_var; k],
        loglik: f64::NEG_INFINITY,
        iterations: 0,
    };

    let mut resp = vec![vec![0.0; k]; n];
    let mut prev_ll = f64::NEG_INFINITY;
    for iter in 1..=MAX_ITERS {
        // E step.
        let mut ll = 0.0;
        for (i, p) in points.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|j| fit.mix[j].ln() + log_normal_diag(p, &fit.means[j], &fit.vars[j]))
                .collect();
            let lse = log_sum_exp(&logs);
            ll += lse;
            for j in 0..k {
                resp[i][j] = (logs[j] - lse).exp();
            }
        }
        if !ll.is_finite() {
            return Err(Error::Degenerate(
                "GMM log-likelihood became non-finite".into(),
            ));
        }

        // M step.
        for j in 0..k {
            let mass: f64 = (0..n).map(|i| resp[i][j]).sum();
            if mass < 1e-10 * n as f64 {
                return Err(Error::Degenerate(format!(
                    "GMM component {j} collapsed (posterior mass {mass:.3e})"
                )));
            }
            fit.mix[j] = mass / n as f64;
            for d in 0..dim {
                fit.means[j][d] = (0..n).map(|i| resp[i][j] * points[i][d]).sum::<f64>() / mass;
            }
            for d in 0..dim {
                let var = (0..n)
                    .map(|i| {
                        let diff = points[i][d] - fit.means[j][d];
                        resp[i][j] * diff * diff
                    })
                    .sum::<f64>()
                    / mass;
                fit.vars[j][d] = var.max(COV_FLOOR);
            }
        }

        fit.loglik = ll;
        fit.iterations = iter;
        if (ll - prev_ll).abs() <= LL_TOL {
            break;
        }
        prev_ll = ll;
    }
    Ok(fit)
}
