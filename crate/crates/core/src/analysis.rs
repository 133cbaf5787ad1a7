//! Singular-value diversity analysis of sensing matrices.

use crate::recon::to_dmatrix;
use crate::scalar::Real;
use crate::sensing::SensingMatrix;

/// Singular values of `H` in descending order, computed in `f64`.
pub fn singular_values<T: Real>(h: &SensingMatrix<T>) -> Vec<f64> {
    let a = to_dmatrix(h);
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Singular values divided by the largest one.
pub fn normalized_singular_values<T: Real>(h: &SensingMatrix<T>) -> Vec<f64> {
    let sv = singular_values(h);
    let max = sv.first().copied().unwrap_or(0.0);
    if max > 0.0 {
        sv.into_iter().map(|s| s / max).collect()
    } else {
        sv
    }
}

/// `σ_hi / σ_lo` using 1-based indices into a descending singular-value list.
pub fn singular_ratio(normalized: &[f64], hi: usize, lo: usize) -> Option<f64> {
    let a = *normalized.get(hi.checked_sub(1)?)?;
    let b = *normalized.get(lo.checked_sub(1)?)?;
    (b > 0.0).then(|| a / b)
}

/// Number of normalized singular values at or above `threshold`.
pub fn effective_rank(normalized: &[f64], threshold: f64) -> usize {
    normalized.iter().filter(|s| **s >= threshold).count()
}
