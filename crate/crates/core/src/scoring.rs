//! Matrix-free leave-one-out scoring for the exponential covariance.
//!
//! `R_θ⁻¹` is tridiagonal, so every leave-one-out mean and variance depends
//! only on the two neighbours of a point. With `ρ_i = e^{-θΔ_i}` and
//! `u_i = 1 - ρ_i²` an interior point has
//!
//! ```text
//! ŷ_{-i} = (u_{i+1} ρ_i y_{i-1} + u_i ρ_{i+1} y_{i+1}) / D_i
//! v_i    = u_i u_{i+1} / D_i,        D_i = u_{i+1} + u_i ρ_{i+1}²
//! ```
//!
//! and the boundary points reduce to the one-sided AR(1) predictor. Writing
//! the formulas in `u` rather than `1/u` keeps them finite for gaps as small
//! as `1/170!`.

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::numeric::{from_usize, lit, log_one_minus_exp, one_minus_exp, Scalar};

/// `S_n(θ, σ²) = n log σ² + l + q / σ²`, with `l` and `q` free of `σ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreDecomposition<T = f64> {
    pub l: T,
    pub q: T,
    pub n: usize,
}

impl<T: Scalar> ScoreDecomposition<T> {
    pub fn value(&self, sigma2: T) -> T {
        from_usize::<T>(self.n) * sigma2.ln() + self.l + self.q / sigma2
    }

    /// Unconstrained minimizer `q / n` of `σ² ↦ value(σ²)`.
    pub fn sigma2_star(&self) -> T {
        self.q / from_usize::<T>(self.n)
    }

    /// `∂/∂σ²` of [`value`](Self::value).
    pub fn sigma2_derivative(&self, sigma2: T) -> T {
        from_usize::<T>(self.n) / sigma2 - self.q / (sigma2 * sigma2)
    }
}

/// Leave-one-out means and unit-variance conditional variances
/// `v_i = 1 / (R_θ⁻¹)_{ii}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LooSummary<T = f64> {
    pub predictions: Vec<T>,
    pub normalized_variances: Vec<T>,
}

/// Symmetric tridiagonal `R_θ⁻¹`: `diag[i]` and `off[i] = (i, i+1)` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Precision<T = f64> {
    pub diag: Vec<T>,
    pub off: Vec<T>,
}

impl<T: Scalar> Precision<T> {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let n = self.diag.len();
        assert_eq!(x.len(), n);
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s = s + self.off[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s = s + self.off[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> Matrix<T> {
        let n = self.diag.len();
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i, i + 1)] = self.off[i];
                m[(i + 1, i)] = self.off[i];
            }
        }
        m
    }
}

/// Quantities attached to one gap, with their `θ`-derivatives.
#[derive(Debug, Clone, Copy)]
struct GapTerm<T> {
    gap: T,
    rho: T,
    u: T,
    log_u: T,
}

impl<T: Scalar> GapTerm<T> {
    #[inline]
    fn new(gap: T, theta: T) -> Self {
        let x = theta * gap;
        let two_x = x + x;
        Self {
            gap,
            rho: (-x).exp(),
            u: one_minus_exp(two_x),
            log_u: log_one_minus_exp(two_x),
        }
    }

    #[inline]
    fn rho2(&self) -> T {
        self.rho * self.rho
    }

    #[inline]
    fn d_rho(&self) -> T {
        -self.gap * self.rho
    }

    #[inline]
    fn d_u(&self) -> T {
        let two = T::one() + T::one();
        two * self.gap * self.rho2()
    }
}

/// One leave-one-out term: prediction, `log v`, and `(y - ŷ)² / v`.
#[derive(Debug, Clone, Copy)]
struct LooTerm<T> {
    prediction: T,
    variance: T,
    log_variance: T,
    weighted_residual2: T,
}

pub(crate) fn check_theta<T: Scalar>(theta: T) -> Result<()> {
    if !(theta > T::zero()) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "theta must be positive and finite, got {theta}"
        )));
    }
    Ok(())
}

pub(crate) fn check_sigma2<T: Scalar>(sigma2: T) -> Result<()> {
    if !(sigma2 > T::zero()) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "sigma2 must be positive and finite, got {sigma2}"
        )));
    }
    Ok(())
}

pub(crate) fn check_data<T: Scalar>(design: &Design<T>, y: &[T]) -> Result<()> {
    if y.len() != design.len() {
        return Err(Error::InvalidParameter(format!(
            "{} observations for a design of {} points",
            y.len(),
            design.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("observation {} is {}", i + 1, y[i])));
    }
    Ok(())
}

/// Streams the leave-one-out terms in index order using O(1) extra memory.
fn for_each_loo<T: Scalar>(design: &Design<T>, y: &[T], theta: T, mut f: impl FnMut(usize, LooTerm<T>)) {
    let gaps = design.gaps();
    let n = design.len();
    let mut left = GapTerm::new(gaps[0], theta);
    // first point: predicted from its right neighbour only
    let pred = left.rho * y[1];
    let e = y[0] - pred;
    f(
        0,
        LooTerm {
            prediction: pred,
            variance: left.u,
            log_variance: left.log_u,
            weighted_residual2: e * e / left.u,
        },
    );
    for j in 1..n - 1 {
        let right = GapTerm::new(gaps[j], theta);
        let d = right.u + left.u * right.rho2();
        let pred = (right.u * left.rho * y[j - 1] + left.u * right.rho * y[j + 1]) / d;
        let e = y[j] - pred;
        f(
            j,
            LooTerm {
                prediction: pred,
                variance: left.u * right.u / d,
                log_variance: left.log_u + right.log_u - d.ln(),
                weighted_residual2: (e * e / left.u) * (d / right.u),
            },
        );
        left = right;
    }
    let pred = left.rho * y[n - 2];
    let e = y[n - 1] - pred;
    f(
        n - 1,
        LooTerm {
            prediction: pred,
            variance: left.u,
            log_variance: left.log_u,
            weighted_residual2: e * e / left.u,
        },
    );
}

/// Tridiagonal `R_θ⁻¹` in closed form.
pub fn precision_matrix<T: Scalar>(design: &Design<T>, theta: T) -> Precision<T> {
    let terms: Vec<GapTerm<T>> = design.gaps().iter().map(|&g| GapTerm::new(g, theta)).collect();
    let n = design.len();
    let mut diag = Vec::with_capacity(n);
    diag.push(T::one() / terms[0].u);
    for j in 1..n - 1 {
        diag.push(T::one() / terms[j - 1].u + terms[j].rho2() / terms[j].u);
    }
    diag.push(T::one() / terms[n - 2].u);
    let off = terms.iter().map(|t| -t.rho / t.u).collect();
    Precision { diag, off }
}

pub fn loo_predictions<T: Scalar>(design: &Design<T>, y: &[T], theta: T) -> Result<LooSummary<T>> {
    check_theta(theta)?;
    check_data(design, y)?;
    let n = design.len();
    let mut predictions = Vec::with_capacity(n);
    let mut normalized_variances = Vec::with_capacity(n);
    for_each_loo(design, y, theta, |_, t| {
        predictions.push(t.prediction);
        normalized_variances.push(t.variance);
    });
    Ok(LooSummary {
        predictions,
        normalized_variances,
    })
}

/// Leave-one-out logarithmic score
/// `S_n = Σ_i [log σ̂²_{-i} + (y_i - ŷ_{-i})² / σ̂²_{-i}]` in O(n).
pub fn log_score<T: Scalar>(design: &Design<T>, y: &[T], theta: T, sigma2: T) -> Result<T> {
    check_theta(theta)?;
    check_sigma2(sigma2)?;
    check_data(design, y)?;
    let log_s2 = sigma2.ln();
    let mut total = T::zero();
    for_each_loo(design, y, theta, |_, t| {
        total = total + (log_s2 + t.log_variance) + t.weighted_residual2 / sigma2;
    });
    Ok(total)
}

pub fn score_decomposition<T: Scalar>(design: &Design<T>, y: &[T], theta: T) -> Result<ScoreDecomposition<T>> {
    check_theta(theta)?;
    check_data(design, y)?;
    let mut l = T::zero();
    let mut q = T::zero();
    for_each_loo(design, y, theta, |_, t| {
        l = l + t.log_variance;
        q = q + t.weighted_residual2;
    });
    Ok(ScoreDecomposition { l, q, n: design.len() })
}

/// Analytic `ψ(θ, σ²) = ∂S_n/∂θ`, differentiated term by term.
pub fn score_gradient_theta<T: Scalar>(design: &Design<T>, y: &[T], theta: T, sigma2: T) -> Result<T> {
    check_theta(theta)?;
    check_sigma2(sigma2)?;
    check_data(design, y)?;
    let two = lit::<T>(2.0);
    let gaps = design.gaps();
    let n = design.len();

    // one-sided terms: e = y_a - ρ y_b, term e²/u
    let boundary = |g: &GapTerm<T>, ya: T, yb: T| -> (T, T) {
        let e = ya - g.rho * yb;
        let de = -g.d_rho() * yb;
        let d_log_v = g.d_u() / g.u;
        let d_quad = (two * e * de - (e * e / g.u) * g.d_u()) / g.u;
        (d_log_v, d_quad)
    };

    let mut d_l = T::zero();
    let mut d_q = T::zero();
    let first = GapTerm::new(gaps[0], theta);
    let (a, b) = boundary(&first, y[0], y[1]);
    d_l = d_l + a;
    d_q = d_q + b;

    let mut left = first;
    for j in 1..n - 1 {
        let right = GapTerm::new(gaps[j], theta);
        let (ul, ur) = (left.u, right.u);
        let (dul, dur) = (left.d_u(), right.d_u());
        let d = ur + ul * right.rho2();
        let dd = dur + dul * right.rho2() + two * ul * right.rho * right.d_rho();
        let num = ur * left.rho * y[j - 1] + ul * right.rho * y[j + 1];
        let dnum = (dur * left.rho + ur * left.d_rho()) * y[j - 1]
            + (dul * right.rho + ul * right.d_rho()) * y[j + 1];
        let pred = num / d;
        let dpred = (dnum - pred * dd) / d;
        let e = y[j] - pred;
        let de = -dpred;
        // divide by u_L and u_R separately: their product underflows for tiny gaps
        let quad = (e * e / ul) * (d / ur);
        d_l = d_l + dul / ul + dur / ur - dd / d;
        d_q = d_q + (two * e * de * (d / ur) + e * e * (dd / ur)) / ul - quad * (dul / ul + dur / ur);
        left = right;
    }
    let (a, b) = boundary(&left, y[n - 1], y[n - 2]);
    d_l = d_l + a;
    d_q = d_q + b;
    Ok(d_l + d_q / sigma2)
}

fn ml_terms<T: Scalar>(design: &Design<T>, y: &[T], theta: T) -> (T, T) {
    let mut log_det = T::zero();
    let mut quad = y[0] * y[0];
    for (k, &g) in design.gaps().iter().enumerate() {
        let t = GapTerm::new(g, theta);
        let w = y[k + 1] - t.rho * y[k];
        log_det = log_det + t.log_u;
        quad = quad + w * w / t.u;
    }
    (log_det, quad)
}

/// Gaussian `-2 log L` via the Markov factorization:
/// `n log(2πσ²) + Σ log(1 - e^{-2θΔ_i}) + [y_1² + Σ W_i² / (1 - e^{-2θΔ_i})] / σ²`
/// with `W_i = y_i - e^{-θΔ_i} y_{i-1}`.
pub fn ml_neg2loglik<T: Scalar>(design: &Design<T>, y: &[T], theta: T, sigma2: T) -> Result<T> {
    check_theta(theta)?;
    check_sigma2(sigma2)?;
    check_data(design, y)?;
    let n = from_usize::<T>(design.len());
    let (log_det, quad) = ml_terms(design, y, theta);
    Ok(n * (lit::<T>(std::f64::consts::TAU) * sigma2).ln() + log_det + quad / sigma2)
}

/// ML objective split as `n log σ² + l + q / σ²` (`l` includes `n log 2π`).
pub fn ml_decomposition<T: Scalar>(design: &Design<T>, y: &[T], theta: T) -> Result<ScoreDecomposition<T>> {
    check_theta(theta)?;
    check_data(design, y)?;
    let n = design.len();
    let (log_det, quad) = ml_terms(design, y, theta);
    Ok(ScoreDecomposition {
        l: from_usize::<T>(n) * lit::<T>(std::f64::consts::TAU).ln() + log_det,
        q: quad,
        n,
    })
}

pub fn ml_gradient_theta<T: Scalar>(design: &Design<T>, y: &[T], theta: T, sigma2: T) -> Result<T> {
    check_theta(theta)?;
    check_sigma2(sigma2)?;
    check_data(design, y)?;
    let two = lit::<T>(2.0);
    let mut d_l = T::zero();
    let mut d_q = T::zero();
    for (k, &g) in design.gaps().iter().enumerate() {
        let t = GapTerm::new(g, theta);
        let w = y[k + 1] - t.rho * y[k];
        let dw = -t.d_rho() * y[k];
        d_l = d_l + t.d_u() / t.u;
        d_q = d_q + (two * w * dw - (w * w / t.u) * t.d_u()) / t.u;
    }
    Ok(d_l + d_q / sigma2)
}
