//! Empirical 2-Wasserstein distances between equally weighted point clouds.

use crate::error::{Error, Result};

/// Largest cloud accepted by the exact assignment solver.
pub const MAX_MATCHING_POINTS: usize = 512;

/// Squared W2 between two 1D samples of equal size, via sorted quantiles.
pub fn w2_squared_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Invalid(format!(
            "1D W2 needs equal nonempty samples, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite sample in W2".into()));
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    let sum: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

pub fn w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(w2_squared_1d(a, b)?.sqrt())
}

/// Squared W2 between two clouds of equal size in any dimension, by exact
/// minimum-cost perfect matching.
pub fn w2_squared_matching(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let n = a.len();
    if n != b.len() || n == 0 {
        return Err(Error::Invalid(format!(
            "matching W2 needs equal nonempty clouds, got {} and {}",
            n,
            b.len()
        )));
    }
    if n > MAX_MATCHING_POINTS {
        return Err(Error::Invalid(format!(
            "matching W2 supports at most {MAX_MATCHING_POINTS} points, got {n}"
        )));
    }
    let mut cost = vec![0.0; n * n];
    for (i, p) in a.iter().enumerate() {
        for (j, q) in b.iter().enumerate() {
            if p.len() != q.len() {
                return Err(Error::Invalid("points of different dimension".into()));
            }
            cost[i * n + j] = p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum();
        }
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::Invalid("non-finite sample in W2".into()));
    }
    let assignment = min_cost_assignment(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

/// Hungarian algorithm with row/column potentials, `O(n³)`. Returns the column
/// assigned to each row of the row-major `n × n` cost matrix.
pub fn min_cost_assignment(cost: &[f64], n: usize) -> Vec<usize> {
    // 1-based arrays with a virtual column 0 holding the row being inserted
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[row_of[j] - 1] = j - 1;
    }
    col_of
}
