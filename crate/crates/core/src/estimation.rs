//! Box-constrained estimation of `(θ, σ²)` by minimizing the leave-one-out
//! score or the Gaussian likelihood.
//!
//! Every objective here splits as `n log σ² + l(θ) + q(θ)/σ²`, so for fixed
//! `θ` the best `σ²` is `q/n` clamped into `[b, B]`. What is left is a
//! one-dimensional problem in `θ`, solved by a log-spaced grid scan followed
//! by golden-section refinement of the bracket around the best node.

use serde::{Deserialize, Serialize};

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::numeric::{from_usize, lit, to_f64, Scalar};
use crate::scoring::{
    ml_decomposition, ml_gradient_theta, score_decomposition, score_gradient_theta, ScoreDecomposition,
};

/// Number of log-spaced grid nodes scanned before refinement.
pub const GRID_NODES: usize = 64;
/// Relative bracket width at which golden-section refinement stops.
pub const THETA_REL_TOL: f64 = 1e-8;
pub const MAX_GOLDEN_ITERATIONS: usize = 200;

/// The rectangle `[a, A] × [b, B]` constraining `(θ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox<T = f64> {
    pub theta_min: T,
    pub theta_max: T,
    pub sigma2_min: T,
    pub sigma2_max: T,
}

impl<T: Scalar> ParameterBox<T> {
    pub fn new(theta_min: T, theta_max: T, sigma2_min: T, sigma2_max: T) -> Result<Self> {
        check_range("theta", theta_min, theta_max)?;
        check_range("sigma2", sigma2_min, sigma2_max)?;
        Ok(Self {
            theta_min,
            theta_max,
            sigma2_min,
            sigma2_max,
        })
    }

    pub fn clamp_sigma2(&self, s: T) -> T {
        s.max(self.sigma2_min).min(self.sigma2_max)
    }

    pub fn contains(&self, theta: T, sigma2: T) -> bool {
        theta >= self.theta_min && theta <= self.theta_max && sigma2 >= self.sigma2_min && sigma2 <= self.sigma2_max
    }
}

fn check_range<T: Scalar>(name: &str, lo: T, hi: T) -> Result<()> {
    if !(lo > T::zero()) || !hi.is_finite() || !(lo <= hi) {
        return Err(Error::InvalidParameter(format!(
            "{name} range must satisfy 0 < min <= max < inf, got [{lo}, {hi}]"
        )));
    }
    Ok(())
}

/// Which box faces the estimate sits on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BoundaryFlags {
    pub theta_lower: bool,
    pub theta_upper: bool,
    pub sigma2_lower: bool,
    pub sigma2_upper: bool,
}

impl BoundaryFlags {
    pub fn any(&self) -> bool {
        self.theta_lower || self.theta_upper || self.sigma2_lower || self.sigma2_upper
    }

    /// Compact `|`-separated form, empty when interior.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.theta_lower {
            parts.push("theta_lower");
        }
        if self.theta_upper {
            parts.push("theta_upper");
        }
        if self.sigma2_lower {
            parts.push("sigma2_lower");
        }
        if self.sigma2_upper {
            parts.push("sigma2_upper");
        }
        parts.join("|")
    }

    pub fn parse(label: &str) -> Self {
        let mut flags = Self::default();
        for part in label.split('|') {
            match part.trim() {
                "theta_lower" => flags.theta_lower = true,
                "theta_upper" => flags.theta_upper = true,
                "sigma2_lower" => flags.sigma2_lower = true,
                "sigma2_upper" => flags.sigma2_upper = true,
                _ => {}
            }
        }
        flags
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateResult<T = f64> {
    pub theta_hat: T,
    pub sigma2_hat: T,
    /// `θ̂ σ̂²`, the consistently estimable quantity.
    pub product: T,
    pub objective_value: T,
    /// `∂/∂θ` of the objective at `(θ̂, σ̂²)`.
    pub gradient_at_opt: T,
    pub boundary_flags: BoundaryFlags,
    pub iterations: usize,
}

/// A criterion of the form `n log σ² + l(θ) + q(θ)/σ²`.
pub trait ThetaObjective<T: Scalar> {
    fn decompose(&self, theta: T) -> Result<ScoreDecomposition<T>>;

    /// `∂/∂θ` at fixed `σ²`.
    fn theta_gradient(&self, theta: T, sigma2: T) -> Result<T>;
}

/// Leave-one-out logarithmic score on centered data.
#[derive(Debug, Clone, Copy)]
pub struct CvObjective<'a, T> {
    pub design: &'a Design<T>,
    pub y: &'a [T],
}

impl<T: Scalar> ThetaObjective<T> for CvObjective<'_, T> {
    fn decompose(&self, theta: T) -> Result<ScoreDecomposition<T>> {
        score_decomposition(self.design, self.y, theta)
    }

    fn theta_gradient(&self, theta: T, sigma2: T) -> Result<T> {
        score_gradient_theta(self.design, self.y, theta, sigma2)
    }
}

/// Gaussian `-2 log L` on centered data.
#[derive(Debug, Clone, Copy)]
pub struct MlObjective<'a, T> {
    pub design: &'a Design<T>,
    pub y: &'a [T],
}

impl<T: Scalar> ThetaObjective<T> for MlObjective<'_, T> {
    fn decompose(&self, theta: T) -> Result<ScoreDecomposition<T>> {
        ml_decomposition(self.design, self.y, theta)
    }

    fn theta_gradient(&self, theta: T, sigma2: T) -> Result<T> {
        ml_gradient_theta(self.design, self.y, theta, sigma2)
    }
}

/// How `σ²` is chosen for each candidate `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaMode<T> {
    /// `clamp(q/n, min, max)`.
    Profile { min: T, max: T },
    Fixed(T),
}

impl<T: Scalar> SigmaMode<T> {
    fn pick(&self, d: &ScoreDecomposition<T>) -> T {
        match *self {
            SigmaMode::Profile { min, max } => d.sigma2_star().max(min).min(max),
            SigmaMode::Fixed(s) => s,
        }
    }
}

/// Closed-form `σ̂²(θ) = clamp(Q/n, b, B)`.
pub fn profile_sigma2<T: Scalar>(decomp: &ScoreDecomposition<T>, bounds: &ParameterBox<T>) -> T {
    bounds.clamp_sigma2(decomp.sigma2_star())
}

/// `√n (p̂ - p₀) / (p₀ τ)`.
pub fn standardized_statistic<T: Scalar>(product_hat: T, true_product: T, n: usize, tau: T) -> T {
    from_usize::<T>(n).sqrt() * (product_hat - true_product) / (true_product * tau)
}

/// Outcome of a golden-section search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoldenOutcome<T> {
    pub x: T,
    pub value: T,
    pub iterations: usize,
    pub final_width: T,
}

/// Golden-section minimization on `[lo, hi]` until the bracket is narrower
/// than `rel_tol · x`. Returns the best point evaluated; ties go to the
/// smaller abscissa.
pub fn golden_section<T: Scalar>(
    mut f: impl FnMut(T) -> Result<T>,
    mut lo: T,
    mut hi: T,
    rel_tol: T,
    max_iter: usize,
) -> Result<GoldenOutcome<T>> {
    let inv_phi = lit::<T>(0.618_033_988_749_894_8);
    let mut best = (T::nan(), T::infinity());
    let record = |x: T, v: T, best: &mut (T, T)| {
        if v < best.1 || (v == best.1 && x < best.0) {
            *best = (x, v);
        }
    };
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    record(x1, f1, &mut best);
    record(x2, f2, &mut best);
    let mut iterations = 0;
    while iterations < max_iter && hi - lo > rel_tol * x1.abs().max(x2.abs()) {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1)?;
            record(x1, f1, &mut best);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2)?;
            record(x2, f2, &mut best);
        }
        iterations += 1;
    }
    Ok(GoldenOutcome {
        x: best.0,
        value: best.1,
        iterations,
        final_width: hi - lo,
    })
}

/// `GRID_NODES` log-spaced nodes on `[lo, hi]`, endpoints exact.
pub fn log_grid<T: Scalar>(lo: T, hi: T) -> Vec<T> {
    if lo == hi {
        return vec![lo];
    }
    let last = GRID_NODES - 1;
    let ratio = (hi / lo).ln();
    (0..GRID_NODES)
        .map(|k| match k {
            0 => lo,
            k if k == last => hi,
            k => lo * (ratio * from_usize::<T>(k) / from_usize::<T>(last)).exp(),
        })
        .collect()
}

/// Minimizes `θ ↦ objective(θ, σ²(θ))` over `[theta_min, theta_max]`.
pub fn estimate_profile<T: Scalar, O: ThetaObjective<T>>(
    objective: &O,
    theta_min: T,
    theta_max: T,
    sigma: SigmaMode<T>,
) -> Result<EstimateResult<T>> {
    check_range("theta", theta_min, theta_max)?;
    match sigma {
        SigmaMode::Profile { min, max } => check_range("sigma2", min, max)?,
        SigmaMode::Fixed(s) => check_range("sigma2", s, s)?,
    }
    let eval = |theta: T| -> Result<T> {
        let d = objective.decompose(theta)?;
        let v = d.value(sigma.pick(&d));
        if !v.is_finite() {
            return Err(Error::NumericalFailure {
                theta: to_f64(theta),
                what: format!("objective evaluated to {v}"),
            });
        }
        Ok(v)
    };

    let grid = log_grid(theta_min, theta_max);
    let mut values = Vec::with_capacity(grid.len());
    for &t in &grid {
        values.push(eval(t)?);
    }
    let mut k_best = 0;
    for k in 1..grid.len() {
        if values[k] < values[k_best] {
            k_best = k;
        }
    }
    let (mut theta_hat, mut best_value) = (grid[k_best], values[k_best]);
    let mut iterations = 0;
    if grid.len() > 1 {
        let lo = grid[k_best.saturating_sub(1)];
        let hi = grid[(k_best + 1).min(grid.len() - 1)];
        let g = golden_section(eval, lo, hi, lit::<T>(THETA_REL_TOL), MAX_GOLDEN_ITERATIONS)?;
        iterations = g.iterations;
        if g.value < best_value || (g.value == best_value && g.x < theta_hat) {
            theta_hat = g.x;
            best_value = g.value;
        }
    }

    let d = objective.decompose(theta_hat)?;
    let sigma2_hat = sigma.pick(&d);
    let gradient_at_opt = objective.theta_gradient(theta_hat, sigma2_hat)?;
    let mut flags = BoundaryFlags::default();
    if theta_min < theta_max {
        flags.theta_lower = theta_hat <= theta_min;
        flags.theta_upper = theta_hat >= theta_max;
    }
    if let SigmaMode::Profile { min, max } = sigma {
        if min < max {
            flags.sigma2_lower = sigma2_hat <= min;
            flags.sigma2_upper = sigma2_hat >= max;
        }
    }
    Ok(EstimateResult {
        theta_hat,
        sigma2_hat,
        product: theta_hat * sigma2_hat,
        objective_value: best_value,
        gradient_at_opt,
        boundary_flags: flags,
        iterations,
    })
}

/// Joint minimization of the score over the box (estimates `θ₀σ₀²` through the product).
pub fn estimate_cv_joint<T: Scalar>(design: &Design<T>, y: &[T], bounds: &ParameterBox<T>) -> Result<EstimateResult<T>> {
    estimate_profile(
        &CvObjective { design, y },
        bounds.theta_min,
        bounds.theta_max,
        SigmaMode::Profile {
            min: bounds.sigma2_min,
            max: bounds.sigma2_max,
        },
    )
}

/// `σ²` pinned at `sigma1_sq`; the target is `θ₀σ₀²/σ₁²`.
pub fn estimate_cv_fixed_sigma<T: Scalar>(
    design: &Design<T>,
    y: &[T],
    sigma1_sq: T,
    theta_range: (T, T),
) -> Result<EstimateResult<T>> {
    estimate_profile(
        &CvObjective { design, y },
        theta_range.0,
        theta_range.1,
        SigmaMode::Fixed(sigma1_sq),
    )
}

/// `θ` pinned at `theta2`; closed form, target `θ₀σ₀²/θ₂`.
pub fn estimate_cv_fixed_theta<T: Scalar>(
    design: &Design<T>,
    y: &[T],
    theta2: T,
    sigma_range: (T, T),
) -> Result<EstimateResult<T>> {
    estimate_profile(
        &CvObjective { design, y },
        theta2,
        theta2,
        SigmaMode::Profile {
            min: sigma_range.0,
            max: sigma_range.1,
        },
    )
}

pub fn estimate_ml_joint<T: Scalar>(design: &Design<T>, y: &[T], bounds: &ParameterBox<T>) -> Result<EstimateResult<T>> {
    estimate_profile(
        &MlObjective { design, y },
        bounds.theta_min,
        bounds.theta_max,
        SigmaMode::Profile {
            min: bounds.sigma2_min,
            max: bounds.sigma2_max,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::log_score;
    use crate::simulate::{sample_path, CovarianceParams};

    fn data(n: usize, seed: u64) -> (Design<f64>, Vec<f64>) {
        let d = Design::regular(n).unwrap();
        let y = sample_path(&d, &CovarianceParams::new(3.0, 1.0).unwrap(), seed);
        (d, y)
    }

    fn paper_box() -> ParameterBox<f64> {
        ParameterBox::new(0.1, 10.0, 0.3, 30.0).unwrap()
    }

    #[test]
    fn profile_sigma_clamps() {
        let b = paper_box();
        let d = ScoreDecomposition { l: 0.0, q: 50.0, n: 10 };
        assert_eq!(profile_sigma2(&d, &b), 5.0);
        let d = ScoreDecomposition { l: 0.0, q: 1000.0, n: 10 };
        assert_eq!(profile_sigma2(&d, &b), 30.0);
        let d = ScoreDecomposition { l: 0.0, q: 1.0, n: 10 };
        assert_eq!(profile_sigma2(&d, &b), 0.3);
    }

    #[test]
    fn box_validation() {
        assert!(ParameterBox::new(0.0, 1.0, 1.0, 2.0).is_err());
        assert!(ParameterBox::new(2.0, 1.0, 1.0, 2.0).is_err());
        assert!(ParameterBox::new(1.0, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn standardized_statistic_values() {
        assert_eq!(standardized_statistic(3.0, 3.0, 200, 1.72), 0.0);
        let p = 3.0 * (1.0 + 1.72 / 200f64.sqrt());
        assert!((standardized_statistic(p, 3.0, 200, 1.72) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_contracts_geometrically() {
        let g = golden_section(|x: f64| Ok((x - 1.3).powi(2)), 1.0, 2.0, 1e-10, 200).unwrap();
        assert!((g.x - 1.3).abs() < 1e-9);
        let bound = 0.618_033_988_749_895_f64.powi(g.iterations as i32) * (1.0 + 1e-9) + 8.0 * f64::EPSILON;
        assert!(g.final_width <= bound);
        assert!(g.iterations <= 200);
    }

    #[test]
    fn joint_estimate_beats_grid_and_is_stationary() {
        let b = paper_box();
        for seed in 0..5 {
            let (d, y) = data(200, seed);
            let r = estimate_cv_joint(&d, &y, &b).unwrap();
            assert!(b.contains(r.theta_hat, r.sigma2_hat));
            assert_eq!(r.product, r.theta_hat * r.sigma2_hat);
            for &t in &log_grid(b.theta_min, b.theta_max) {
                let dec = score_decomposition(&d, &y, t).unwrap();
                assert!(r.objective_value <= dec.value(profile_sigma2(&dec, &b)));
            }
            let direct = log_score(&d, &y, r.theta_hat, r.sigma2_hat).unwrap();
            assert!((direct - r.objective_value).abs() < 1e-9 * direct.abs().max(1.0));
            if !r.boundary_flags.theta_lower && !r.boundary_flags.theta_upper {
                assert!(r.gradient_at_opt.abs() < 1e-6 * 200.0, "psi = {}", r.gradient_at_opt);
            }
            if !r.boundary_flags.sigma2_lower && !r.boundary_flags.sigma2_upper {
                let dec = score_decomposition(&d, &y, r.theta_hat).unwrap();
                assert!(dec.sigma2_derivative(r.sigma2_hat).abs() < 1e-6 * 200.0);
            }
        }
    }

    #[test]
    fn collapsed_box_returns_the_point() {
        let (d, y) = data(50, 1);
        let b = ParameterBox::new(2.0, 2.0, 0.7, 0.7).unwrap();
        let r = estimate_cv_joint(&d, &y, &b).unwrap();
        assert_eq!((r.theta_hat, r.sigma2_hat), (2.0, 0.7));
        assert_eq!(r.objective_value, score_decomposition(&d, &y, 2.0).unwrap().value(0.7));
        let r = estimate_ml_joint(&d, &y, &b).unwrap();
        assert_eq!((r.theta_hat, r.sigma2_hat), (2.0, 0.7));
    }

    #[test]
    fn fixed_theta_matches_collapsed_joint() {
        let (d, y) = data(80, 2);
        let a = estimate_cv_fixed_theta(&d, &y, 3.0, (0.3, 30.0)).unwrap();
        let b = estimate_cv_joint(&d, &y, &ParameterBox::new(3.0, 3.0, 0.3, 30.0).unwrap()).unwrap();
        assert_eq!(a, b);
        let dec = score_decomposition(&d, &y, 3.0).unwrap();
        assert_eq!(a.sigma2_hat, dec.q / 80.0);
    }

    #[test]
    fn fixed_theta_lower_clamp_sets_flag() {
        let d = Design::<f64>::regular(30).unwrap();
        let y: Vec<f64> = (0..30).map(|i| 1e-3 * (i as f64).sin()).collect();
        let r = estimate_cv_fixed_theta(&d, &y, 3.0, (0.3, 30.0)).unwrap();
        assert_eq!(r.sigma2_hat, 0.3);
        assert!(r.boundary_flags.sigma2_lower);
    }

    #[test]
    fn fixed_sigma_scale_equivariance() {
        let (d, y) = data(100, 4);
        let c = 2.0;
        let scaled: Vec<f64> = y.iter().map(|v| c * v).collect();
        let a = estimate_cv_fixed_sigma(&d, &scaled, 1.0, (0.1, 10.0)).unwrap();
        let b = estimate_cv_fixed_sigma(&d, &y, 1.0 / (c * c), (0.1, 10.0)).unwrap();
        assert!((a.theta_hat - b.theta_hat).abs() < 1e-6 * a.theta_hat);
    }

    #[test]
    fn ml_profile_uses_markov_quadratic() {
        let (d, y) = data(60, 5);
        let b = paper_box();
        let r = estimate_ml_joint(&d, &y, &b).unwrap();
        let dec = ml_decomposition(&d, &y, r.theta_hat).unwrap();
        assert_eq!(r.sigma2_hat, b.clamp_sigma2(dec.q / 60.0));
    }
}
