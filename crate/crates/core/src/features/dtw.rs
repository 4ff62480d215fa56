//! Dynamic time warping over dense series.

use crate::error::{Error, Result};

/// Unconstrained DTW distance with local cost `|a[i] - b[j]|` and steps
/// {(1,0), (0,1), (1,1)}.
///
/// Iterative dynamic program over a rolling row: O(len(a)·len(b)) time,
/// O(len(b)) space. Symmetric, non-negative, and zero on identical inputs,
/// but not a metric (no triangle inequality).
pub fn dtw(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate("dtw over an empty series".into()));
    }
    let mut prev = vec![0.0f64; b.len()];
    let mut curr = vec![0.0f64; b.len()];

    // Row 0: only horizontal steps.
    prev[0] = (a[0] - b[0]).abs();
    for j in 1..b.len() {
        prev[j] = prev[j - 1] + (a[0] - b[j]).abs();
    }
    for &ai in &a[1..] {
        curr[0] = prev[0] + (ai - b[0]).abs();
        for j in 1..b.len() {
            let best = prev[j].min(curr[j - 1]).min(prev[j - 1]);
            curr[j] = best + (ai - b[j]).abs();
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    Ok(prev[b.len() - 1])
}
