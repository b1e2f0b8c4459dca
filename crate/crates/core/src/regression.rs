//! Unknown-mean extension: `z = Fβ₀ + y` with `y` the centered process.
//!
//! The trend-aware leave-one-out predictor refits `β` without the held-out
//! point. Its residuals and variances come from the projected precision
//! `Q_θ⁻ = R⁻¹ - R⁻¹F(F'R⁻¹F)⁻¹F'R⁻¹`:
//!
//! ```text
//! z_i - ẑ_{-i} = (Q_θ⁻ z)_i / (Q_θ⁻)_{ii},    σ̌²_{-i} = σ² / (Q_θ⁻)_{ii}
//! ```
//!
//! Both are assembled from the tridiagonal `R⁻¹` without forming `Q_θ⁻`:
//! with `G = R⁻¹F` and `M = F'G`, `(Q_θ⁻)_{ii} = (R⁻¹)_{ii} - g_i'M⁻¹g_i`,
//! in `O(n p²)` overall.

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::estimation::{estimate_profile, EstimateResult, ParameterBox, SigmaMode, ThetaObjective};
use crate::linalg::{Cholesky, Matrix};
use crate::numeric::{lit, Scalar};
use crate::oracle::{dense_gls, MAX_DENSE_N};
use crate::scoring::{
    check_data, check_sigma2, check_theta, log_score, loo_predictions, precision_matrix, LooSummary, Precision,
    ScoreDecomposition,
};
use crate::simulate::{check_full_rank, covariance_matrix};

/// Trend-aware score with the residual terms relating it to the centered score:
/// `value = base_score - r1 + (r2 + 2 r3 - r4) / σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionScore<T = f64> {
    pub value: T,
    pub r1: T,
    pub r2: T,
    pub r3: T,
    pub r4: T,
    /// Centered score of `z - F β_ref` (`β_ref = 0` unless given).
    pub base_score: T,
}

impl<T: Scalar> RegressionScore<T> {
    /// Right-hand side of the decomposition at `sigma2`.
    pub fn recomposed(&self, sigma2: T) -> T {
        let two = lit::<T>(2.0);
        self.base_score - self.r1 + (self.r2 + two * self.r3 - self.r4) / sigma2
    }
}

/// Everything the fast paths share for one `θ`.
struct GlsParts<T> {
    precision: Precision<T>,
    /// `G = R⁻¹F`, n × p.
    g: Matrix<T>,
    m: Matrix<T>,
    m_chol: Cholesky<T>,
    /// `R⁻¹z`.
    pz: Vec<T>,
    /// `F'R⁻¹z`.
    ftpz: Vec<T>,
}

fn check_trend<T: Scalar>(design: &Design<T>, f: &Matrix<T>) -> Result<()> {
    if f.rows() != design.len() {
        return Err(Error::InvalidParameter(format!(
            "trend matrix has {} rows for a design of {} points",
            f.rows(),
            design.len()
        )));
    }
    check_full_rank(f)
}

fn gls_parts<T: Scalar>(design: &Design<T>, z: &[T], theta: T, f: &Matrix<T>) -> Result<GlsParts<T>> {
    check_theta(theta)?;
    check_data(design, z)?;
    check_trend(design, f)?;
    let precision = precision_matrix(design, theta);
    let (n, p) = (f.rows(), f.cols());
    let mut g = Matrix::zeros(n, p);
    for k in 0..p {
        for (i, v) in precision.mul_vec(&f.column(k)).into_iter().enumerate() {
            g[(i, k)] = v;
        }
    }
    let m = f.transpose().matmul(&g);
    let m_chol = Cholesky::new(&m)?;
    let pz = precision.mul_vec(z);
    let ftpz = f.transpose().mul_vec(&pz);
    Ok(GlsParts {
        precision,
        g,
        m,
        m_chol,
        pz,
        ftpz,
    })
}

impl<T: Scalar> GlsParts<T> {
    fn beta(&self) -> Vec<T> {
        self.m_chol.solve(&self.ftpz)
    }

    /// `(Q_θ⁻)_{ii}` and `(Q_θ⁻ z)_i` for every `i`.
    fn projected(&self) -> Result<(Vec<T>, Vec<T>)> {
        let n = self.g.rows();
        let beta = self.beta();
        let g_beta = self.g.mul_vec(&beta);
        let mut diag = Vec::with_capacity(n);
        for i in 0..n {
            let gi = self.g.row(i);
            let sol = self.m_chol.solve(gi);
            let eps_bar: T = gi.iter().zip(&sol).map(|(&a, &b)| a * b).sum();
            let qd = self.precision.diag[i] - eps_bar;
            if !(qd > T::zero()) {
                return Err(Error::Conditioning(format!(
                    "projected precision diagonal {} at index {} is not positive",
                    qd,
                    i + 1
                )));
            }
            diag.push(qd);
        }
        let qz = self.pz.iter().zip(g_beta).map(|(&a, b)| a - b).collect();
        Ok((diag, qz))
    }
}

/// GLS coefficients `(F'R⁻¹F)⁻¹F'R⁻¹z` using the tridiagonal `R⁻¹`.
pub fn gls_beta<T: Scalar>(design: &Design<T>, z: &[T], theta: T, f: &Matrix<T>) -> Result<Vec<T>> {
    Ok(gls_parts(design, z, theta, f)?.beta())
}

/// Trend-aware leave-one-out means and unit-variance conditional variances.
pub fn reg_loo_predictions<T: Scalar>(design: &Design<T>, z: &[T], theta: T, f: &Matrix<T>) -> Result<LooSummary<T>> {
    let parts = gls_parts(design, z, theta, f)?;
    let (diag, qz) = parts.projected()?;
    Ok(LooSummary {
        predictions: z.iter().zip(&qz).zip(&diag).map(|((&zi, &w), &d)| zi - w / d).collect(),
        normalized_variances: diag.iter().map(|&d| T::one() / d).collect(),
    })
}

/// `S̄_n = n log σ² + l̄(θ) + q̄(θ)/σ²`.
pub fn reg_decomposition<T: Scalar>(design: &Design<T>, z: &[T], theta: T, f: &Matrix<T>) -> Result<ScoreDecomposition<T>> {
    let parts = gls_parts(design, z, theta, f)?;
    let (diag, qz) = parts.projected()?;
    let mut l = T::zero();
    let mut q = T::zero();
    for (&d, &w) in diag.iter().zip(&qz) {
        l = l - d.ln();
        q = q + w * w / d;
    }
    Ok(ScoreDecomposition { l, q, n: design.len() })
}

/// Trend-aware score with its residual decomposition against the centered
/// score of `z` itself.
pub fn reg_log_score<T: Scalar>(design: &Design<T>, z: &[T], theta: T, sigma2: T, f: &Matrix<T>) -> Result<RegressionScore<T>> {
    let zero = vec![T::zero(); f.cols()];
    reg_log_score_with_reference(design, z, theta, sigma2, f, &zero)
}

/// As [`reg_log_score`], decomposing against the centered score of
/// `y = z - F β_ref`.
///
/// The residual terms use a route independent of `Q_θ⁻`: column-wise
/// leave-one-out residuals of `F` from the tridiagonal predictor, and
/// `β̂_{-i}` from the rank-one downdate
/// `F_{-i}'R_{-i}⁻¹F_{-i} = M - g_i g_i' / (R⁻¹)_{ii}`.
pub fn reg_log_score_with_reference<T: Scalar>(
    design: &Design<T>,
    z: &[T],
    theta: T,
    sigma2: T,
    f: &Matrix<T>,
    beta_ref: &[T],
) -> Result<RegressionScore<T>> {
    check_sigma2(sigma2)?;
    if beta_ref.len() != f.cols() {
        return Err(Error::InvalidParameter(format!(
            "reference coefficients have length {} for {} basis columns",
            beta_ref.len(),
            f.cols()
        )));
    }
    let parts = gls_parts(design, z, theta, f)?;
    let (diag, qz) = parts.projected()?;
    let log_s2 = sigma2.ln();
    let value = diag
        .iter()
        .zip(&qz)
        .map(|(&d, &w)| (log_s2 - d.ln()) + (w * w / d) / sigma2)
        .sum();

    let (n, p) = (f.rows(), f.cols());
    let y: Vec<T> = z
        .iter()
        .zip(f.mul_vec(beta_ref))
        .map(|(&zi, m)| zi - m)
        .collect();
    let base_score = log_score(design, &y, theta, sigma2)?;
    let y_loo = loo_predictions(design, &y, theta)?;
    let col_loo: Vec<Vec<T>> = (0..p)
        .map(|k| loo_predictions(design, &f.column(k), theta).map(|l| l.predictions))
        .collect::<Result<_>>()?;

    let (mut r1, mut r2, mut r3, mut r4) = (T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..n {
        let pii = parts.precision.diag[i];
        let gi = parts.g.row(i);
        let eps_bar: T = gi
            .iter()
            .zip(parts.m_chol.solve(gi))
            .map(|(&a, b)| a * b)
            .sum();
        let m_del = Matrix::from_fn(p, p, |a, b| parts.m[(a, b)] - gi[a] * gi[b] / pii);
        let rhs: Vec<T> = (0..p)
            .map(|k| parts.ftpz[k] - gi[k] * parts.pz[i] / pii)
            .collect();
        let beta_del = Cholesky::new(&m_del)?.solve(&rhs);
        let eps: T = (0..p)
            .map(|k| (f[(i, k)] - col_loo[k][i]) * (beta_ref[k] - beta_del[k]))
            .sum();
        let e = y[i] - y_loo.predictions[i];
        r1 = r1 + (-eps_bar / pii).ln_1p();
        r2 = r2 + pii * eps * eps;
        r3 = r3 + pii * eps * e;
        r4 = r4 + eps_bar * (e + eps) * (e + eps);
    }
    Ok(RegressionScore {
        value,
        r1,
        r2,
        r3,
        r4,
        base_score,
    })
}

/// `β̂_{-i}`: GLS on the design with point `i` (0-based) removed, computed densely.
pub fn loo_beta<T: Scalar>(design: &Design<T>, z: &[T], theta: T, f: &Matrix<T>, i: usize) -> Result<Vec<T>> {
    let n = design.len();
    if n > MAX_DENSE_N {
        return Err(Error::InvalidSize(format!(
            "dense leave-one-out GLS limited to n <= {MAX_DENSE_N}, got {n}"
        )));
    }
    if i >= n {
        return Err(Error::InvalidParameter(format!("index {i} out of range for {n} points")));
    }
    check_theta(theta)?;
    check_data(design, z)?;
    check_trend(design, f)?;
    let r = covariance_matrix(design, theta).delete_row_col(i);
    let f_del = f.delete_row(i);
    check_full_rank(&f_del)?;
    let z_del: Vec<T> = (0..n).filter(|&j| j != i).map(|j| z[j]).collect();
    dense_gls(&r, &f_del, &z_del)
}

/// Trend-aware score as a [`ThetaObjective`].
#[derive(Debug, Clone, Copy)]
pub struct RegressionObjective<'a, T> {
    pub design: &'a Design<T>,
    pub z: &'a [T],
    pub f: &'a Matrix<T>,
}

impl<T: Scalar> ThetaObjective<T> for RegressionObjective<'_, T> {
    fn decompose(&self, theta: T) -> Result<ScoreDecomposition<T>> {
        reg_decomposition(self.design, self.z, theta, self.f)
    }

    /// Central difference with step `1e-5 θ`.
    fn theta_gradient(&self, theta: T, sigma2: T) -> Result<T> {
        let h = lit::<T>(1e-5) * theta;
        let up = self.decompose(theta + h)?.value(sigma2);
        let down = self.decompose(theta - h)?.value(sigma2);
        Ok((up - down) / (h + h))
    }
}

/// Joint minimization of the trend-aware score over the box.
pub fn estimate_cv_reg<T: Scalar>(
    design: &Design<T>,
    z: &[T],
    f: &Matrix<T>,
    bounds: &ParameterBox<T>,
) -> Result<EstimateResult<T>> {
    check_trend(design, f)?;
    estimate_profile(
        &RegressionObjective { design, z, f },
        bounds.theta_min,
        bounds.theta_max,
        SigmaMode::Profile {
            min: bounds.sigma2_min,
            max: bounds.sigma2_max,
        },
    )
}

/// Unit-variance covariance of the GLS estimator, `(F'R⁻¹F)⁻¹`.
pub fn gls_covariance<T: Scalar>(design: &Design<T>, theta: T, f: &Matrix<T>) -> Result<Matrix<T>> {
    let zeros = vec![T::zero(); design.len()];
    Ok(gls_parts(design, &zeros, theta, f)?.m_chol.inverse())
}

/// `F = [t_i^k]` for `k = 0..=degree`.
pub fn polynomial_matrix<T: Scalar>(design: &Design<T>, degree: usize) -> Matrix<T> {
    let pts = design.points();
    Matrix::from_fn(pts.len(), degree + 1, |i, k| pts[i].powi(k as i32))
}
