//! Least-squares solves shared by the trainers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `RCOND * sigma_max` mark a rank-deficient system.
pub const RCOND: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct LstsqSolution {
    pub coefficients: DVector<f64>,
    pub rank_deficient: bool,
}

fn is_rank_deficient(sv: &DVector<f64>) -> bool {
    let max = sv.max();
    let min = sv.min();
    !(max > 0.0) || min <= RCOND * max
}

/// `argmin ||A c - b||^2`.
///
/// Full-rank systems are solved through the SVD of `A`. Rank-deficient ones go
/// through the normal equations with `jitter` added to the diagonal; with zero
/// jitter (or a failed factorization) the minimum-norm pseudo-inverse solution
/// is returned instead.
pub fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>, jitter: f64) -> Result<LstsqSolution> {
    if a.nrows() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: b.len(),
        });
    }
    if a.nrows() == 0 || a.ncols() == 0 {
        return Err(Error::Input("empty least-squares system".into()));
    }
    let svd = a.clone().svd(true, true);
    let deficient = a.nrows() < a.ncols() || is_rank_deficient(&svd.singular_values);
    if !deficient {
        let c = svd
            .solve(b, 0.0)
            .map_err(|e| Error::Numerical(format!("svd solve failed: {e}")))?;
        return Ok(LstsqSolution {
            coefficients: c,
            rank_deficient: false,
        });
    }
    if jitter > 0.0 {
        let mut ata = a.transpose() * a;
        for i in 0..ata.nrows() {
            ata[(i, i)] += jitter;
        }
        if let Some(chol) = ata.cholesky() {
            let c = chol.solve(&(a.transpose() * b));
            if c.iter().all(|v| v.is_finite()) {
                return Ok(LstsqSolution {
                    coefficients: c,
                    rank_deficient: true,
                });
            }
        }
    }
    let eps = RCOND * svd.singular_values.max();
    let c = svd
        .solve(b, eps)
        .map_err(|e| Error::Numerical(format!("pseudo-inverse solve failed: {e}")))?;
    Ok(LstsqSolution {
        coefficients: c,
        rank_deficient: true,
    })
}

/// `argmin sum_n w_n (b_n - A_n c)^2` with `w_n >= 0`. Errors on a rank-deficient
/// weighted system instead of regularizing it.
pub fn weighted_least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    w: &[f64],
) -> Result<DVector<f64>> {
    if w.len() != a.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.nrows(),
            found: w.len(),
        });
    }
    let mut aw = a.clone();
    let mut bw = b.clone();
    for (n, wn) in w.iter().enumerate() {
        let s = wn.max(0.0).sqrt();
        aw.row_mut(n).scale_mut(s);
        bw[n] *= s;
    }
    let sol = least_squares(&aw, &bw, 0.0)?;
    if sol.rank_deficient {
        return Err(Error::Numerical("weighted system is rank deficient".into()));
    }
    Ok(sol.coefficients)
}

/// Ridge regression with an unpenalized final column (the intercept):
/// solves `(A^T A + ridge * D) c = A^T b` where `D` is the identity without its
/// last diagonal entry.
pub fn ridge_with_intercept(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    ridge: f64,
) -> Result<DVector<f64>> {
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "ridge must be >= 0, got {ridge}"
        )));
    }
    if ridge == 0.0 {
        return least_squares(a, b, 0.0).map(|s| s.coefficients);
    }
    let p = a.ncols();
    let mut ata = a.transpose() * a;
    for i in 0..p.saturating_sub(1) {
        ata[(i, i)] += ridge;
    }
    let atb = a.transpose() * b;
    match ata.clone().cholesky() {
        Some(chol) => Ok(chol.solve(&atb)),
        None => {
            let svd = ata.svd(true, true);
            let eps = RCOND * svd.singular_values.max();
            svd.solve(&atb, eps)
                .map_err(|e| Error::Numerical(format!("ridge solve failed: {e}")))
        }
    }
}

/// Design matrix `[x_n^T, 1]` for the given rows.
pub fn design_with_intercept<'a>(
    rows: impl ExactSizeIterator<Item = &'a [f64]>,
    dim: usize,
) -> DMatrix<f64> {
    let n = rows.len();
    let mut m = DMatrix::zeros(n, dim + 1);
    for (r, x) in rows.enumerate() {
        for (i, v) in x.iter().enumerate() {
            m[(r, i)] = *v;
        }
        m[(r, dim)] = 1.0;
    }
    m
}
