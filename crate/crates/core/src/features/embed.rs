//! Laplacian-eigenmap embedding of the DTW similarity matrix.

use nalgebra::DMatrix;

use super::SimilarityMatrix;
use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as the trivial
/// (constant-vector) kernel of the Laplacian.
const ZERO_TOL_REL: f64 = 1e-8;

/// Low-dimensional spectral coordinates for `n` entities.
#[derive(Debug, Clone)]
pub struct EmbeddedFeature {
    /// `n` rows of `p` coordinates each.
    pub coordinates: Vec<Vec<f64>>,
    /// The `p` retained eigenvalues, ascending and strictly positive.
    pub eigenvalues: Vec<f64>,
}

/// Embed via the graph Laplacian `L = D − W`, `D_ii = Σ_j W_ij`.
///
/// Eigenvectors with near-zero eigenvalue (the constant vector, plus one per
/// extra connected component) are discarded; the eigenvectors of the `p`
/// smallest remaining eigenvalues become the coordinate axes, ordered by
/// ascending eigenvalue. Each eigenvector's sign is canonicalized (first
/// non-negligible component positive) so embeddings are reproducible.
pub fn laplacian_embed(w: &SimilarityMatrix, p: usize) -> Result<EmbeddedFeature> {
    let n = w.n();
    if p == 0 {
        return Err(Error::Param("embedding dimension p must be >= 1".into()));
    }
    if p >= n {
        return Err(Error::Param(format!(
            "embedding dimension p = {p} must be smaller than n = {n}"
        )));
    }

    let l = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            (0..n).map(|k| w.get(i, k)).sum::<f64>()
        } else {
            -w.get(i, j)
        }
    });
    let eig = l.symmetric_eigen();

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let max_eig = eig.eigenvalues[order[n - 1]].max(0.0);
    let tol = ZERO_TOL_REL * max_eig;

    let nontrivial: Vec<usize> = order
        .iter()
        .copied()
        .filter(|&i| eig.eigenvalues[i] > tol)
        .collect();
    if nontrivial.len() < p {
        return Err(Error::Degenerate(format!(
            "only {} nontrivial eigenvalues available, need {} ({} short)",
            nontrivial.len(),
            p,
            p - nontrivial.len()
        )));
    }

    let mut coordinates = vec![vec![0.0; p]; n];
    let mut eigenvalues = Vec::with_capacity(p);
    for (d, &col) in nontrivial[..p].iter().enumerate() {
        eigenvalues.push(eig.eigenvalues[col]);
        let v = eig.eigenvectors.column(col);
        let sign = v
            .iter()
            .find(|x| x.abs() > 1e-12)
            .map_or(1.0, |x| x.signum());
        for i in 0..n {
            coordinates[i][d] = v[i] * sign;
        }
    }
    Ok(EmbeddedFeature {
        coordinates,
        eigenvalues,
    })
}
