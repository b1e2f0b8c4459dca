//! Dense `O(n³)` reference computations.
//!
//! Nothing here touches the tridiagonal structure: each routine builds
//! `R_θ` entrywise and goes through a generic Cholesky factorization, so
//! agreement with the matrix-free paths in [`crate::scoring`] and
//! [`crate::regression`] is a genuine cross-check.

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::numeric::{from_usize, lit, Scalar};
use crate::scoring::{check_data, check_sigma2, check_theta, LooSummary};
use crate::simulate::covariance_matrix;

/// Size cap for the cubic-cost routines.
pub const MAX_DENSE_N: usize = 2000;

fn guard(n: usize) -> Result<()> {
    if n > MAX_DENSE_N {
        return Err(Error::InvalidSize(format!(
            "dense oracle limited to n <= {MAX_DENSE_N}, got {n}"
        )));
    }
    Ok(())
}

/// `R_θ⁻¹` by dense factorization.
pub fn dense_precision<T: Scalar>(design: &Design<T>, theta: T) -> Result<Matrix<T>> {
    guard(design.len())?;
    check_theta(theta)?;
    Ok(Cholesky::new(&covariance_matrix(design, theta))?.inverse())
}

/// Leave-one-out means and variances from the dense precision:
/// `ŷ_{-i} = -Σ_{j≠i} P_ij y_j / P_ii`, `v_i = 1 / P_ii`.
pub fn dense_loo<T: Scalar>(design: &Design<T>, y: &[T], theta: T) -> Result<LooSummary<T>> {
    check_data(design, y)?;
    let p = dense_precision(design, theta)?;
    Ok(loo_from_precision(&p, y))
}

pub(crate) fn loo_from_precision<T: Scalar>(p: &Matrix<T>, y: &[T]) -> LooSummary<T> {
    let n = y.len();
    let mut predictions = Vec::with_capacity(n);
    let mut normalized_variances = Vec::with_capacity(n);
    for i in 0..n {
        let pii = p[(i, i)];
        let s: T = (0..n).filter(|&j| j != i).map(|j| p[(i, j)] * y[j]).sum();
        predictions.push(-s / pii);
        normalized_variances.push(T::one() / pii);
    }
    LooSummary {
        predictions,
        normalized_variances,
    }
}

fn score_from_loo<T: Scalar>(loo: &LooSummary<T>, y: &[T], sigma2: T) -> T {
    y.iter()
        .zip(&loo.predictions)
        .zip(&loo.normalized_variances)
        .map(|((&yi, &pred), &v)| {
            let var = sigma2 * v;
            let e = yi - pred;
            var.ln() + e * e / var
        })
        .sum()
}

/// Logarithmic score the slow way: dense `R_θ⁻¹`, leave-one-out identities,
/// then the plain sum over points.
pub fn dense_oracle_score<T: Scalar>(design: &Design<T>, y: &[T], theta: T, sigma2: T) -> Result<T> {
    check_sigma2(sigma2)?;
    let loo = dense_loo(design, y, theta)?;
    Ok(score_from_loo(&loo, y, sigma2))
}

/// Gaussian `-2 log L` with covariance `σ² R_θ`: `n log 2π + log det(σ²R) + y'(σ²R)⁻¹y`.
pub fn dense_ml_neg2loglik<T: Scalar>(design: &Design<T>, y: &[T], theta: T, sigma2: T) -> Result<T> {
    guard(design.len())?;
    check_theta(theta)?;
    check_sigma2(sigma2)?;
    check_data(design, y)?;
    let n = from_usize::<T>(design.len());
    let chol = Cholesky::new(&covariance_matrix(design, theta))?;
    let x = chol.solve(y);
    let quad: T = x.iter().zip(y).map(|(&a, &b)| a * b).sum();
    Ok(n * (lit::<T>(std::f64::consts::TAU) * sigma2).ln() + chol.log_det() + quad / sigma2)
}

/// Materialized `Q_θ⁻ = R⁻¹ - R⁻¹F(F'R⁻¹F)⁻¹F'R⁻¹`.
pub fn dense_projected_precision<T: Scalar>(design: &Design<T>, theta: T, f: &Matrix<T>) -> Result<Matrix<T>> {
    let p = dense_precision(design, theta)?;
    let pf = p.matmul(f);
    let m = f.transpose().matmul(&pf);
    let m_inv = Cholesky::new(&m)?.inverse();
    let correction = pf.matmul(&m_inv).matmul(&pf.transpose());
    let n = p.rows();
    Ok(Matrix::from_fn(n, n, |i, j| p[(i, j)] - correction[(i, j)]))
}

/// Trend-aware score from the materialized `Q_θ⁻`.
pub fn dense_reg_score<T: Scalar>(design: &Design<T>, z: &[T], theta: T, sigma2: T, f: &Matrix<T>) -> Result<T> {
    check_sigma2(sigma2)?;
    check_data(design, z)?;
    let q = dense_projected_precision(design, theta, f)?;
    let loo = loo_from_precision(&q, z);
    Ok(score_from_loo(&loo, z, sigma2))
}

/// GLS coefficients `(F'R⁻¹F)⁻¹ F'R⁻¹ z` for an explicit correlation matrix.
pub(crate) fn dense_gls<T: Scalar>(r: &Matrix<T>, f: &Matrix<T>, z: &[T]) -> Result<Vec<T>> {
    let chol = Cholesky::new(r)?;
    let rinv_f = chol.solve_matrix(f);
    let rinv_z = chol.solve(z);
    let ft = f.transpose();
    let m = ft.matmul(&rinv_f);
    let rhs = ft.mul_vec(&rinv_z);
    Ok(Cholesky::new(&m)?.solve(&rhs))
}

/// Leave-one-out trend-aware predictions computed directly from the deleted
/// system: `f_i'β̂_{-i} + r_{-i}' R_{-i}⁻¹ (z_{-i} - F_{-i} β̂_{-i})`.
pub fn dense_reg_loo_predictions<T: Scalar>(design: &Design<T>, z: &[T], theta: T, f: &Matrix<T>) -> Result<Vec<T>> {
    guard(design.len())?;
    check_theta(theta)?;
    check_data(design, z)?;
    let r = covariance_matrix(design, theta);
    let n = design.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let r_del = r.delete_row_col(i);
        let f_del = f.delete_row(i);
        let z_del: Vec<T> = (0..n).filter(|&j| j != i).map(|j| z[j]).collect();
        let beta = dense_gls(&r_del, &f_del, &z_del)?;
        let resid: Vec<T> = z_del
            .iter()
            .zip(f_del.mul_vec(&beta))
            .map(|(&a, b)| a - b)
            .collect();
        let cross: Vec<T> = (0..n).filter(|&j| j != i).map(|j| r[(i, j)]).collect();
        let w = Cholesky::new(&r_del)?.solve(&resid);
        let kriged: T = cross.iter().zip(&w).map(|(&a, &b)| a * b).sum();
        let trend: T = f.row(i).iter().zip(&beta).map(|(&a, &b)| a * b).sum();
        out.push(trend + kriged);
    }
    Ok(out)
}
