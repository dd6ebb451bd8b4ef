//! Oracle error heuristic: refine everything close to the worst element.

use crate::error_metrics::ElementErrors;
use crate::mesh::MarkVector;

/// Marks element `i` iff its normalized error exceeds `θ · max_j err_j`.
pub fn heuristic_policy(errors: &ElementErrors, theta: f64) -> MarkVector {
    let max = errors.normalized.iter().copied().fold(0.0, f64::max);
    let cut = theta * max;
    MarkVector::new(errors.normalized.iter().map(|&e| e > cut).collect())
}
