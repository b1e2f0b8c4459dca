//! Exact sampling of the Ornstein–Uhlenbeck process at design points.
//!
//! The process is Markov, so the finite-dimensional law `N(0, σ² R_θ)` is
//! produced exactly by the AR(1) recursion
//! `y_i = e^{-θΔ_i} y_{i-1} + sqrt(σ²(1 - e^{-2θΔ_i})) ε_i`.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::linalg::{pivoted_rank, Matrix};
use crate::numeric::{lit, one_minus_exp, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceParams<T = f64> {
    theta: T,
    sigma2: T,
}

impl<T: Scalar> CovarianceParams<T> {
    pub fn new(theta: T, sigma2: T) -> Result<Self> {
        if !(theta > T::zero()) || !theta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "theta must be positive and finite, got {theta}"
            )));
        }
        if !(sigma2 > T::zero()) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma2 must be positive and finite, got {sigma2}"
            )));
        }
        Ok(Self { theta, sigma2 })
    }

    pub fn theta(&self) -> T {
        self.theta
    }

    pub fn sigma2(&self) -> T {
        self.sigma2
    }

    /// The microergodic product `θσ²`.
    pub fn product(&self) -> T {
        self.theta * self.sigma2
    }
}

pub type BasisFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Linear trend `Σ_k β_k f_k(t)` over a fixed basis.
#[derive(Clone)]
pub struct TrendSpec<T = f64> {
    beta: Vec<T>,
    basis: Vec<BasisFn<T>>,
}

impl<T: Scalar> fmt::Debug for TrendSpec<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TrendSpec")
            .field("beta", &self.beta)
            .field("basis_len", &self.basis.len())
            .finish()
    }
}

/// Relative tolerance of the column-rank test on the trend matrix.
pub const RANK_TOLERANCE: f64 = 1e-10;

impl<T: Scalar> TrendSpec<T> {
    pub fn new(beta: Vec<T>, basis: Vec<BasisFn<T>>) -> Result<Self> {
        if basis.is_empty() {
            return Err(Error::InvalidParameter("trend needs at least one basis function".into()));
        }
        if beta.len() != basis.len() {
            return Err(Error::InvalidParameter(format!(
                "{} coefficients for {} basis functions",
                beta.len(),
                basis.len()
            )));
        }
        Ok(Self { beta, basis })
    }

    /// Monomial basis `1, t, ..., t^degree`.
    pub fn polynomial(degree: usize, beta: Vec<T>) -> Result<Self> {
        Self::new(beta, polynomial_basis(degree))
    }

    pub fn beta(&self) -> &[T] {
        &self.beta
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// `F = [f_k(s_i)]`, checked for full column rank.
    pub fn design_matrix(&self, design: &Design<T>) -> Result<Matrix<T>> {
        let points = design.points();
        let f = Matrix::from_fn(points.len(), self.basis.len(), |i, k| (self.basis[k])(points[i]));
        check_full_rank(&f)?;
        Ok(f)
    }

    pub fn mean(&self, t: T) -> T {
        self.basis
            .iter()
            .zip(&self.beta)
            .map(|(f, &b)| b * f(t))
            .sum()
    }
}

pub fn polynomial_basis<T: Scalar>(degree: usize) -> Vec<BasisFn<T>> {
    (0..=degree)
        .map(|k| {
            let f: BasisFn<T> = Arc::new(move |t: T| t.powi(k as i32));
            f
        })
        .collect()
}

pub fn check_full_rank<T: Scalar>(f: &Matrix<T>) -> Result<()> {
    if f.cols() == 0 {
        return Err(Error::InvalidParameter("trend matrix has no columns".into()));
    }
    if f.cols() >= f.rows() {
        return Err(Error::LinearDependence {
            rank: f.rows().min(f.cols()),
            cols: f.cols(),
        });
    }
    let rank = pivoted_rank(f, lit::<T>(RANK_TOLERANCE));
    if rank < f.cols() {
        return Err(Error::LinearDependence {
            rank,
            cols: f.cols(),
        });
    }
    Ok(())
}

/// Seed for replicate `index` of a run with base seed `seed` (SplitMix64
/// finalizer over the pair), so every replicate owns an independent stream.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws `(y_1, ..., y_n) ~ N(0, σ² R_θ)`; bitwise deterministic in `seed`.
pub fn sample_path<T: Scalar>(design: &Design<T>, params: &CovarianceParams<T>, seed: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = || lit::<T>(StandardNormal.sample(&mut rng));
    let sigma = params.sigma2.sqrt();
    let two = lit::<T>(2.0);
    let mut y = Vec::with_capacity(design.len());
    let mut prev = sigma * normal();
    y.push(prev);
    for &gap in design.gaps() {
        let x = params.theta * gap;
        let rho = (-x).exp();
        let sd = sigma * one_minus_exp(two * x).sqrt();
        prev = rho * prev + sd * normal();
        y.push(prev);
    }
    y
}

/// `z_i = Σ_k β_k f_k(s_i) + y_i`, with `y` the centered path for the same seed.
pub fn sample_with_trend<T: Scalar>(
    design: &Design<T>,
    params: &CovarianceParams<T>,
    trend: &TrendSpec<T>,
    seed: u64,
) -> Result<Vec<T>> {
    let f = trend.design_matrix(design)?;
    let mean = f.mul_vec(trend.beta());
    let y = sample_path(design, params, seed);
    Ok(y.into_iter().zip(mean).map(|(y, m)| y + m).collect())
}

/// Dense correlation matrix `(R_θ)_{jk} = e^{-θ|s_j - s_k|}`, with distances
/// accumulated from the gaps.
pub fn covariance_matrix<T: Scalar>(design: &Design<T>, theta: T) -> Matrix<T> {
    let n = design.len();
    let gaps = design.gaps();
    let mut r = Matrix::identity(n);
    for j in 0..n {
        let mut dist = T::zero();
        for k in j + 1..n {
            dist = dist + gaps[k - 1];
            let v = (-theta * dist).exp();
            r[(j, k)] = v;
            r[(k, j)] = v;
        }
    }
    r
}
