//! Dense solves for the small systems that appear in tabular TD fixed points.
//!
//! All solves go through LU with partial pivoting followed by a relative
//! residual check; nothing here forms an explicit inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative residual accepted after a solve.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Reciprocal condition below which a TD system counts as singular.
pub const SINGULAR_RCOND: f64 = 1e-12;
/// Relative ridge used when a TD system is singular.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Outcome of a guarded TD-system solve.
#[derive(Clone, Debug)]
pub struct Solved {
    pub x: DMatrix<f64>,
    /// Reciprocal condition estimate (smallest over largest singular value)
    /// of the reduced system actually solved, before any ridge.
    pub rcond: f64,
    pub regularized: bool,
}

/// Ratio of the extreme singular values; 0 for the zero matrix.
pub fn reciprocal_condition(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 1.0;
    }
    let sv = a.singular_values();
    let max = sv.max();
    let min = sv.min();
    if max <= 0.0 || !max.is_finite() {
        0.0
    } else {
        min / max
    }
}

/// Number of singular values above `tol` times the largest one.
pub fn numerical_rank(a: &DMatrix<f64>, tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > tol * max).count()
}

/// LU solve of `a x = b` with a relative residual check.
pub fn solve(a: &DMatrix<f64>, b: &DMatrix<f64>, context: &str) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(Error::Shape(format!(
            "{context}: system {}x{} with rhs {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let x = a.clone().lu().solve(b).ok_or_else(|| Error::Singular {
        context: context.to_string(),
        rcond: 0.0,
    })?;
    let residual = relative_residual(a, &x, b);
    if !residual.is_finite() || residual > RESIDUAL_TOL {
        return Err(Error::Residual {
            context: context.to_string(),
            residual,
        });
    }
    Ok(x)
}

pub fn solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, context: &str) -> Result<DVector<f64>> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve(a, &rhs, context)?;
    Ok(x.column(0).into_owned())
}

fn relative_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let r = a * x - b;
    let scale = inf_norm(a) * inf_norm(x) + inf_norm(b);
    if scale == 0.0 {
        0.0
    } else {
        inf_norm(&r) / scale
    }
}

/// Maximum absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// Indices that take part in the system: a row or a column of `a`, or a row
/// of `rhs`, is nonzero. The remaining unknowns are decoupled and set to 0.
fn active_indices(a: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Vec<usize> {
    (0..a.nrows())
        .filter(|&i| {
            a.row(i).iter().any(|&v| v != 0.0)
                || a.column(i).iter().any(|&v| v != 0.0)
                || rhs.row(i).iter().any(|&v| v != 0.0)
        })
        .collect()
}

fn restrict(a: &DMatrix<f64>, rhs: &DMatrix<f64>, idx: &[usize]) -> (DMatrix<f64>, DMatrix<f64>) {
    let k = idx.len();
    let ar = DMatrix::from_fn(k, k, |i, j| a[(idx[i], idx[j])]);
    let br = DMatrix::from_fn(k, rhs.ncols(), |i, j| rhs[(idx[i], j)]);
    (ar, br)
}

fn scatter(x: &DMatrix<f64>, idx: &[usize], n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, x.ncols());
    for (i, &row) in idx.iter().enumerate() {
        for j in 0..x.ncols() {
            out[(row, j)] = x[(i, j)];
        }
    }
    out
}

/// Solves a TD normal system `a x = rhs`.
///
/// Unknowns whose row and column are identically zero (features never
/// visited and never bootstrapped into) are fixed at zero. If the remaining
/// system has reciprocal condition below [`SINGULAR_RCOND`] it is retried with
/// a ridge `eps * I`, `eps = RIDGE_SCALE * |trace| / n`, and flagged.
pub fn solve_td_system(a: &DMatrix<f64>, rhs: &DMatrix<f64>, context: &str) -> Result<Solved> {
    let n = a.nrows();
    let idx = active_indices(a, rhs);
    if idx.is_empty() {
        return Ok(Solved {
            x: DMatrix::zeros(n, rhs.ncols()),
            rcond: 1.0,
            regularized: false,
        });
    }
    let (ar, br) = restrict(a, rhs, &idx);
    let rcond = reciprocal_condition(&ar);
    if rcond >= SINGULAR_RCOND {
        let x = solve(&ar, &br, context)?;
        return Ok(Solved {
            x: scatter(&x, &idx, n),
            rcond,
            regularized: false,
        });
    }
    let k = idx.len() as f64;
    let mut eps = RIDGE_SCALE * ar.trace().abs() / k;
    if eps == 0.0 {
        eps = RIDGE_SCALE * max_abs(&ar).max(1.0);
    }
    let ridged = &ar + DMatrix::identity(idx.len(), idx.len()) * eps;
    let ridged_rcond = reciprocal_condition(&ridged);
    if ridged_rcond < f64::EPSILON {
        return Err(Error::Singular {
            context: context.to_string(),
            rcond,
        });
    }
    let x = solve(&ridged, &br, context)?;
    Ok(Solved {
        x: scatter(&x, &idx, n),
        rcond,
        regularized: true,
    })
}

/// Like [`solve_td_system`] but errors instead of regularizing when the
/// reduced system has reciprocal condition below `min_rcond`.
pub fn solve_full_rank(
    a: &DMatrix<f64>,
    rhs: &DMatrix<f64>,
    min_rcond: f64,
    context: &str,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let idx = active_indices(a, rhs);
    if idx.is_empty() {
        return Ok(DMatrix::zeros(n, rhs.ncols()));
    }
    let (ar, br) = restrict(a, rhs, &idx);
    let rcond = reciprocal_condition(&ar);
    if rcond < min_rcond {
        return Err(Error::Singular {
            context: context.to_string(),
            rcond,
        });
    }
    Ok(scatter(&solve(&ar, &br, context)?, &idx, n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_recovers_known_solution() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 2.0, 3.0]);
        let x = DMatrix::from_row_slice(2, 1, &[1.0, -2.0]);
        let b = &a * &x;
        let got = solve(&a, &b, "test").unwrap();
        assert!((got - x).abs().max() < 1e-14);
    }

    #[test]
    fn decoupled_unknowns_are_zeroed_without_ridge() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(3, 1, &[2.0, 0.0, 3.0]);
        let s = solve_td_system(&a, &b, "test").unwrap();
        assert!(!s.regularized);
        assert_eq!(s.x[(1, 0)], 0.0);
        assert!((s.x[(0, 0)] - 1.0).abs() < 1e-14);
        assert!((s.x[(2, 0)] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_system_gets_ridge() {
        // column 1 is bootstrapped into but row 1 is never visited
        let a = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let s = solve_td_system(&a, &b, "test").unwrap();
        assert!(s.regularized);
        assert!(s.rcond < SINGULAR_RCOND);
        assert!(s.x[(1, 0)].abs() < 1e-12);
        assert!((s.x[(0, 0)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn rank_counts_independent_columns() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 2.0, 4.0, 3.0, 6.0]);
        assert_eq!(numerical_rank(&a, 1e-10), 1);
        assert_eq!(numerical_rank(&DMatrix::<f64>::identity(4, 4), 1e-10), 4);
    }
}

/// Serializes a vector as a flat JSON array.
pub fn ser_vec<S: serde::Serializer>(v: &DVector<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(v.iter())
}

/// Serializes a matrix as an array of rows.
pub fn ser_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()))
}
