//! Observation designs on `[0, 1]` and their asymptotic-variance factor `τ_n²`.
//!
//! A design is stored by its gaps `Δ_i = s_i - s_{i-1}` (the quantity every
//! score formula consumes) together with the points. Gaps are the source of
//! truth: for the factorial-gap family the smallest gaps fall far below the
//! spacing of binary64 near 1, so the points cannot carry them.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numeric::{from_usize, lit, Scalar};

/// Largest size accepted by the factorial-gap family; `171!` overflows binary64.
pub const MAX_MINIMAL_N: usize = 170;

/// Size above which the factorial-gap design is flagged as numerically fragile.
pub const MINIMAL_WARN_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Design<T = f64> {
    points: Vec<T>,
    /// `gaps[k] = s_{k+1} - s_k` (0-based), i.e. `Δ_{k+2}` in 1-based notation.
    gaps: Vec<T>,
}

/// Per-index gap ratios entering `τ_n²`, for interior indices `i = 3..n-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GapProfile<T = f64> {
    pub q: Vec<T>,
    pub cross: Vec<T>,
}

fn sum_tolerance<T: Scalar>() -> T {
    lit::<T>(1e-12).max(lit::<T>(16.0) * T::epsilon())
}

/// Neumaier-compensated sum.
pub(crate) fn compensated_sum<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    let mut sum = T::zero();
    let mut comp = T::zero();
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp = comp + ((sum - t) + x);
        } else {
            comp = comp + ((x - t) + sum);
        }
        sum = t;
    }
    sum + comp
}

fn points_from_gaps<T: Scalar>(gaps: &[T]) -> Vec<T> {
    let mut points = Vec::with_capacity(gaps.len() + 1);
    points.push(T::zero());
    let mut sum = T::zero();
    let mut comp = T::zero();
    for &g in gaps {
        let t = sum + g;
        if sum.abs() >= g.abs() {
            comp = comp + ((sum - t) + g);
        } else {
            comp = comp + ((g - t) + sum);
        }
        sum = t;
        points.push(sum + comp);
    }
    if let Some(last) = points.last_mut() {
        *last = T::one();
    }
    points
}

impl<T: Scalar> Design<T> {
    /// Equispaced design `{0, 1/(n-1), ..., 1}`.
    pub fn regular(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!(
                "a design needs at least 3 points, got {n}"
            )));
        }
        let m = from_usize::<T>(n - 1);
        let h = T::one() / m;
        let mut points: Vec<T> = (0..n).map(|i| from_usize::<T>(i) / m).collect();
        points[n - 1] = T::one();
        Ok(Self {
            points,
            gaps: vec![h; n - 1],
        })
    }

    /// Alternating long/short gaps `2(1-γ)/n`, `2γ/n`, closed by `Δ_n = 1 - Σ`.
    ///
    /// With `γ = 1/n` this family drives `τ_n²` to its upper limit 4.
    pub fn maximal(n: usize, gamma: T) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidSize(format!(
                "the alternating design needs at least 4 points, got {n}"
            )));
        }
        if !(gamma > T::zero() && gamma < T::one()) {
            return Err(Error::InvalidParameter(format!(
                "gamma must lie in (0, 1), got {gamma}"
            )));
        }
        let nn = from_usize::<T>(n);
        let two = lit::<T>(2.0);
        let long = (T::one() - gamma) * two / nn;
        let short = two * gamma / nn;
        // 1-based gap index i = 2..n-1
        let mut gaps: Vec<T> = (2..n).map(|i| if i % 2 == 0 { long } else { short }).collect();
        let closing = T::one() - compensated_sum(gaps.iter().copied());
        if !(closing > T::zero()) {
            return Err(Error::InvalidDesign {
                index: n,
                reason: format!("closing gap {closing} is not positive"),
            });
        }
        gaps.push(closing);
        Self::from_gaps(gaps)
    }

    /// Factorial-gap design: `Δ_i = 1/i!` for `i > ⌊n^α⌋`, the remaining mass
    /// spread evenly over `Δ_2..Δ_{⌊n^α⌋}`. Drives `τ_n²` to its lower limit 2.
    pub fn minimal(n: usize, alpha: T) -> Result<Self> {
        if n < 5 {
            return Err(Error::InvalidSize(format!(
                "the factorial-gap design needs at least 5 points, got {n}"
            )));
        }
        if n > MAX_MINIMAL_N {
            return Err(Error::Overflow(format!(
                "factorial-gap design with n = {n} exceeds the binary64 factorial range (n <= {MAX_MINIMAL_N})"
            )));
        }
        let head = dense_head_len(n, alpha)?;
        if n > MINIMAL_WARN_N {
            log::warn!(
                "factorial-gap design with n = {n}: gaps down to 1/{n}! are beyond the resolution of the points"
            );
        }
        // Δ_{head+1} = 1/(head+1)!, then Δ_{i+1} = Δ_i / (i+1)
        let mut delta = T::one();
        for k in 1..=head + 1 {
            delta = delta / from_usize::<T>(k);
        }
        let mut tail = Vec::with_capacity(n - head);
        for i in head + 1..=n {
            if i > head + 1 {
                delta = delta / from_usize::<T>(i);
            }
            if !(delta >= T::min_positive_value()) {
                return Err(Error::Overflow(format!(
                    "gap 1/{i}! underflows the scalar type"
                )));
            }
            tail.push(delta);
        }
        let rest = compensated_sum(tail.iter().copied());
        let even = (T::one() - rest) / from_usize::<T>(head - 1);
        let mut gaps = vec![even; head - 1];
        gaps.extend(tail);
        Self::from_gaps(gaps)
    }

    /// Validates caller-supplied sorted points with `s_1 = 0` and `s_n = 1`.
    pub fn from_points(points: Vec<T>) -> Result<Self> {
        let n = points.len();
        if n < 3 {
            return Err(Error::InvalidSize(format!(
                "a design needs at least 3 points, got {n}"
            )));
        }
        for (i, &s) in points.iter().enumerate() {
            if !s.is_finite() {
                return Err(Error::InvalidDesign {
                    index: i + 1,
                    reason: "point is not finite".into(),
                });
            }
            if s < T::zero() || s > T::one() {
                return Err(Error::InvalidDesign {
                    index: i + 1,
                    reason: format!("point {s} outside [0, 1]"),
                });
            }
        }
        if points[0] != T::zero() {
            return Err(Error::InvalidDesign {
                index: 1,
                reason: format!("first point must be 0, got {}", points[0]),
            });
        }
        for i in 1..n {
            if points[i] == points[i - 1] {
                return Err(Error::InvalidDesign {
                    index: i + 1,
                    reason: format!("duplicate point {}", points[i]),
                });
            }
            if points[i] < points[i - 1] {
                return Err(Error::InvalidDesign {
                    index: i + 1,
                    reason: format!("points not increasing: {} after {}", points[i], points[i - 1]),
                });
            }
        }
        if points[n - 1] != T::one() {
            return Err(Error::InvalidDesign {
                index: n,
                reason: format!("last point must be 1, got {}", points[n - 1]),
            });
        }
        let gaps = points.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(Self { points, gaps })
    }

    /// Builds a design from positive gaps summing to one; points are the
    /// compensated running sums, with the last pinned to 1.
    pub fn from_gaps(gaps: Vec<T>) -> Result<Self> {
        if gaps.len() < 2 {
            return Err(Error::InvalidSize(format!(
                "a design needs at least 3 points, got {}",
                gaps.len() + 1
            )));
        }
        for (k, &g) in gaps.iter().enumerate() {
            if !(g > T::zero()) || !g.is_finite() {
                return Err(Error::InvalidDesign {
                    index: k + 2,
                    reason: format!("gap {g} is not positive and finite"),
                });
            }
        }
        let total = compensated_sum(gaps.iter().copied());
        if (total - T::one()).abs() > sum_tolerance::<T>() {
            return Err(Error::InvalidDesign {
                index: gaps.len() + 1,
                reason: format!("gaps sum to {total}, not 1"),
            });
        }
        let points = points_from_gaps(&gaps);
        Ok(Self { points, gaps })
    }

    /// Random design with Dirichlet(1, ..., 1) gaps.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidSize(format!(
                "a design needs at least 3 points, got {n}"
            )));
        }
        let raw: Vec<f64> = (1..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let total = compensated_sum(raw.iter().copied());
        let gaps = raw.iter().map(|&g| lit::<T>(g / total)).collect();
        Self::from_gaps(gaps)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[T] {
        &self.points
    }

    /// Gaps `Δ_2..Δ_n`, stored 0-based.
    pub fn gaps(&self) -> &[T] {
        &self.gaps
    }

    pub fn min_gap(&self) -> T {
        self.gaps.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_gap(&self) -> T {
        self.gaps.iter().copied().fold(T::zero(), T::max)
    }

    /// Mirror image `s_i -> 1 - s_{n+1-i}`.
    pub fn reversed(&self) -> Self {
        let gaps: Vec<T> = self.gaps.iter().rev().copied().collect();
        let points = points_from_gaps(&gaps);
        Self { points, gaps }
    }

    pub fn gap_profile(&self) -> Result<GapProfile<T>> {
        let n = self.len();
        if n < 5 {
            return Err(Error::InvalidSize(format!(
                "tau_n^2 needs at least 5 points, got {n}"
            )));
        }
        let g = &self.gaps;
        let mut q = Vec::with_capacity(n - 3);
        let mut cross = Vec::with_capacity(n - 3);
        for k in 1..n - 2 {
            let (prev, cur, next) = (g[k - 1], g[k], g[k + 1]);
            q.push(next / (cur + next) + prev / (cur + prev));
            // split the ratio: cur * next underflows for factorial gaps
            let s = cur + next;
            cross.push((cur / s) * (next / s));
        }
        Ok(GapProfile { q, cross })
    }

    /// `τ_n² = (2/n) Σ_{i=3}^{n-1} [q_i² + 2 Δ_iΔ_{i+1}/(Δ_i+Δ_{i+1})²]`.
    pub fn tau_squared(&self) -> Result<T> {
        let profile = self.gap_profile()?;
        let two = lit::<T>(2.0);
        let sum: T = profile
            .q
            .iter()
            .zip(&profile.cross)
            .map(|(&q, &c)| q * q + two * c)
            .sum();
        Ok(two / from_usize::<T>(self.len()) * sum)
    }
}

fn dense_head_len<T: Scalar>(n: usize, alpha: T) -> Result<usize> {
    if !(alpha > T::zero() && alpha < T::one()) {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let alpha = alpha.to_f64().unwrap_or(f64::NAN);
    let head = ((n as f64).powf(alpha) + 1e-9).floor() as usize;
    if head < 2 {
        return Err(Error::InvalidParameter(format!(
            "floor(n^alpha) = {head} must be at least 2"
        )));
    }
    Ok(head.min(n))
}

/// Natural logs of the factorial-gap design's gaps `Δ_2..Δ_n`, valid for any
/// `n` since nothing is exponentiated except the (underflow-safe) tail mass.
pub fn minimal_log_gaps(n: usize, alpha: f64) -> Result<Vec<f64>> {
    if n < 5 {
        return Err(Error::InvalidSize(format!(
            "the factorial-gap design needs at least 5 points, got {n}"
        )));
    }
    let head = dense_head_len(n, alpha)?;
    let mut log_fact = 0.0_f64;
    for k in 2..=head {
        log_fact += (k as f64).ln();
    }
    let mut tail = Vec::with_capacity(n - head);
    for i in head + 1..=n {
        log_fact += (i as f64).ln();
        tail.push(-log_fact);
    }
    let rest = compensated_sum(tail.iter().map(|&l| l.exp()));
    let even = ((1.0 - rest) / (head - 1) as f64).ln();
    let mut out = vec![even; head - 1];
    out.extend(tail);
    Ok(out)
}

/// Logistic `1 / (1 + e^{-x})`, stable for any `x`.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `τ_n²` from log-gaps; every ratio in the formula depends only on gap
/// differences in the log domain, so arbitrarily small gaps are fine.
pub fn tau_squared_from_log_gaps(log_gaps: &[f64]) -> Result<f64> {
    let n = log_gaps.len() + 1;
    if n < 5 {
        return Err(Error::InvalidSize(format!(
            "tau_n^2 needs at least 5 points, got {n}"
        )));
    }
    let mut sum = 0.0;
    for k in 1..n - 2 {
        let (prev, cur, next) = (log_gaps[k - 1], log_gaps[k], log_gaps[k + 1]);
        let q = logistic(next - cur) + logistic(prev - cur);
        let cross = logistic(next - cur) * logistic(cur - next);
        sum += q * q + 2.0 * cross;
    }
    Ok(2.0 / n as f64 * sum)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn regular_small_and_reference_sizes() {
        let d = Design::<f64>::regular(3).unwrap();
        assert_eq!(d.points(), &[0.0, 0.5, 1.0]);
        let d = Design::<f64>::regular(12).unwrap();
        assert!(d.gaps().iter().all(|&g| g == 1.0 / 11.0));
        assert_eq!(d.points()[11], 1.0);
        assert!(matches!(Design::<f64>::regular(2), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn maximal_six_points_by_hand() {
        let d = Design::<f64>::maximal(6, 1.0 / 6.0).unwrap();
        let expected = [0.0, 5.0 / 18.0, 6.0 / 18.0, 11.0 / 18.0, 12.0 / 18.0, 1.0];
        for (p, e) in d.points().iter().zip(expected) {
            assert!((p - e).abs() < 1e-15, "{p} vs {e}");
        }
        assert!((d.gaps()[4] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn maximal_even_n_closes_with_two_over_n() {
        let d = Design::<f64>::maximal(12, 1.0 / 12.0).unwrap();
        assert!((d.gaps()[10] - 2.0 / 12.0).abs() < 1e-15);
        // odd n closes with (1 + 2γ)/n
        let d = Design::<f64>::maximal(7, 0.25).unwrap();
        assert!((d.gaps()[5] - 1.5 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn maximal_near_degenerate_gamma_is_still_valid() {
        let d = Design::<f64>::maximal(4, 0.999999).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.gaps().iter().all(|&g| g > 0.0));
        assert!(d.points().windows(2).all(|w| w[1] > w[0]));
        assert!(Design::<f64>::maximal(6, 1.0).is_err());
    }

    #[test]
    fn minimal_twelve_points_matches_direct_factorial_sum() {
        let d = Design::<f64>::minimal(12, 0.5).unwrap();
        // oracle: factorials by repeated multiplication
        let mut fact = 1.0_f64;
        let mut r = 0.0;
        for i in 1..=12 {
            fact *= i as f64;
            if i >= 4 {
                r += 1.0 / fact;
            }
        }
        let g = d.gaps();
        assert!((g[0] - (1.0 - r) / 2.0).abs() < 1e-16);
        assert_eq!(g[0], g[1]);
        assert!((g[2] - 1.0 / 24.0).abs() < 1e-17);
        assert!((g[10] - 1.0 / 479001600.0).abs() < 1e-24);
        let total: f64 = g.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
        // nine points within 0.05 of the right endpoint
        let cluster = d.points().iter().filter(|&&s| s > 1.0 - 0.05).count();
        assert_eq!(cluster, 9);
    }

    #[test]
    fn minimal_guards() {
        assert!(matches!(Design::<f64>::minimal(200, 0.5), Err(Error::Overflow(_))));
        assert!(matches!(Design::<f64>::minimal(6, 0.2), Err(Error::InvalidParameter(_))));
        assert!(Design::<f64>::minimal(170, 0.5).is_ok());
        assert!(matches!(Design::<f32>::minimal(60, 0.5), Err(Error::Overflow(_))));
    }

    #[test]
    fn from_points_validation() {
        let d = Design::from_points(vec![0.0, 0.3, 1.0]).unwrap();
        assert_eq!(d.gaps(), &[0.3, 0.7]);
        match Design::from_points(vec![0.0, 0.5, 0.5, 1.0]) {
            Err(Error::InvalidDesign { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
        match Design::from_points(vec![0.1, 0.5, 1.0]) {
            Err(Error::InvalidDesign { index, .. }) => assert_eq!(index, 1),
            other => panic!("{other:?}"),
        }
        match Design::from_points(vec![0.0, 0.6, 0.5, 1.0]) {
            Err(Error::InvalidDesign { index, .. }) => assert_eq!(index, 3),
            other => panic!("{other:?}"),
        }
        assert!(Design::from_points(vec![0.0, 0.5, 0.9]).is_err());
        assert!(Design::from_points(vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn tau_regular_closed_form() {
        for n in [5usize, 6, 12, 200, 10_000] {
            let t = Design::<f64>::regular(n).unwrap().tau_squared().unwrap();
            let e = 3.0 * (n as f64 - 3.0) / n as f64;
            assert!(((t - e) / e).abs() < 1e-14, "n={n}: {t} vs {e}");
        }
        assert!(Design::<f64>::regular(4).unwrap().tau_squared().is_err());
    }

    #[test]
    fn tau_maximal_matches_large_n_closed_form() {
        let n = 1000;
        let gamma = 1.0 / n as f64;
        let t = Design::<f64>::maximal(n, gamma).unwrap().tau_squared().unwrap();
        let closed = 4.0 * gamma * gamma - 4.0 * gamma + 4.0;
        assert!((t - closed).abs() < 0.05, "{t} vs {closed}");
    }

    #[test]
    fn gap_profile_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = Design::<f64>::random(300, &mut rng).unwrap();
        let p = d.gap_profile().unwrap();
        assert!(p.q.iter().all(|&q| q > 0.0 && q < 2.0));
        assert!(p.cross.iter().all(|&c| c > 0.0 && c <= 0.25));
    }

    #[test]
    fn log_gap_route_agrees_with_direct_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [5usize, 9, 57, 400] {
            let d = Design::<f64>::random(n, &mut rng).unwrap();
            let logs: Vec<f64> = d.gaps().iter().map(|g| g.ln()).collect();
            let a = d.tau_squared().unwrap();
            let b = tau_squared_from_log_gaps(&logs).unwrap();
            assert!((a - b).abs() < 1e-12, "n={n}: {a} vs {b}");
        }
        let d = Design::<f64>::minimal(12, 0.5).unwrap();
        let logs = minimal_log_gaps(12, 0.5).unwrap();
        for (g, l) in d.gaps().iter().zip(&logs) {
            assert!((g.ln() - l).abs() < 1e-12);
        }
        let a = d.tau_squared().unwrap();
        let b = tau_squared_from_log_gaps(&logs).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_precision_designs() {
        let d = Design::<f32>::regular(12).unwrap();
        let t = d.tau_squared().unwrap();
        assert!((t - 2.25).abs() < 1e-6);
        let d = Design::<f32>::minimal(12, 0.5).unwrap();
        assert!(d.tau_squared().unwrap() < 2.25);
    }
}
