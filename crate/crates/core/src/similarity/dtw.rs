use serde::{Deserialize, Serialize};

use super::vectors::{euclidean, EventVectorTable};
use crate::ehr::Step;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentResult<S> {
    pub distance: S,
    /// `(i, j)` pairs from `(0, 0)` to `(len_a - 1, len_b - 1)`.
    pub path: Vec<(usize, usize)>,
}

/// Dynamic time warping over precomputed per-step vectors.
///
/// With `band = Some(w)` only cells with `|i - j| <= max(w, |len_a - len_b|)`
/// are considered (a Sakoe-Chiba band widened so the end stays reachable).
/// Backtracking prefers the diagonal, then up `(i - 1, j)`, then left.
pub fn align_vectors<S: Scalar>(a: &[Vec<S>], b: &[Vec<S>], band: Option<usize>) -> Result<AlignmentResult<S>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySequence);
    }
    let (n, m) = (a.len(), b.len());
    let width = band.map(|w| w.max(n.abs_diff(m)));
    let inside = |i: usize, j: usize| width.is_none_or(|w| i.abs_diff(j) <= w);
    let inf = S::infinity();
    let mut acc = vec![inf; n * m];
    for i in 0..n {
        for j in 0..m {
            if !inside(i, j) {
                continue;
            }
            let cost = euclidean(&a[i], &b[j]);
            let best = if i == 0 && j == 0 {
                S::zero()
            } else {
                let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { inf };
                let up = if i > 0 { acc[(i - 1) * m + j] } else { inf };
                let left = if j > 0 { acc[i * m + j - 1] } else { inf };
                diag.min(up).min(left)
            };
            acc[i * m + j] = cost + best;
        }
    }

    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while (i, j) != (0, 0) {
        let diag = if i > 0 && j > 0 { acc[(i - 1) * m + j - 1] } else { inf };
        let up = if i > 0 { acc[(i - 1) * m + j] } else { inf };
        let left = if j > 0 { acc[i * m + j - 1] } else { inf };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok(AlignmentResult { distance: acc[n * m - 1], path })
}

/// Aligns two step lists under the mean-vector Euclidean step cost.
pub fn align<S: Scalar>(a: &[Step], b: &[Step], vectors: &EventVectorTable<S>, band: Option<usize>) -> Result<AlignmentResult<S>> {
    align_vectors(&vectors.step_vectors(a)?, &vectors.step_vectors(b)?, band)
}
