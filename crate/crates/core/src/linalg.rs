//! Small dense linear-algebra helpers shared by the estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Condition number above which a matrix is treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// 2-norm condition number from singular values (`∞` for a singular matrix).
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return f64::INFINITY;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverse with a conditioning check; `context` names the matrix in errors.
pub fn inverse_checked(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let condition = condition_number(a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularMatrix { context, condition });
    }
    a.clone().try_inverse().ok_or(Error::SingularMatrix { context, condition })
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let condition = condition_number(a);
    if !(condition <= MAX_CONDITION) {
        return Err(Error::SingularMatrix { context, condition });
    }
    match a.clone().cholesky() {
        Some(chol) => Ok(chol.solve(b)),
        None => Err(Error::SingularMatrix { context, condition }),
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `Mᵀ diag(w) M`.
pub fn weighted_gram(m: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * w[i]);
    symmetrize(&scaled.tr_mul(m))
}
