//! Scalar abstraction and cancellation-free exponential helpers.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumCast};

/// Floating-point scalar the numerical core is generic over: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumCast + Sum + Debug + Display + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Converts an `f64` constant into `T`.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

#[inline]
pub fn from_usize<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("usize representable in scalar type")
}

#[inline]
pub fn to_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// `1 - exp(-x)` without cancellation for small `x`.
#[inline]
pub fn one_minus_exp<T: Scalar>(x: T) -> T {
    -(-x).exp_m1()
}

/// `ln(1 - exp(-x))` for `x > 0`, accurate across the whole range.
///
/// Switches between `ln(-expm1(-x))` and `ln1p(-exp(-x))` at `ln 2`.
#[inline]
pub fn log_one_minus_exp<T: Scalar>(x: T) -> T {
    if x <= lit::<T>(std::f64::consts::LN_2) {
        (-(-x).exp_m1()).ln()
    } else {
        (-(-x).exp()).ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_minus_exp_small_argument_keeps_relative_accuracy() {
        for &x in &[1e-300_f64, 1e-200, 1e-30, 1e-16, 1e-8] {
            let v = one_minus_exp(x);
            // series: x - x^2/2
            let s = x - x * x / 2.0;
            assert!(((v - s) / s).abs() < 1e-15, "x={x}: {v} vs {s}");
        }
    }

    #[test]
    fn log_one_minus_exp_matches_series_and_naive_ranges() {
        for &x in &[1e-300_f64, 1e-100, 1e-12, 1e-9] {
            let v = log_one_minus_exp(x);
            let s = x.ln() + (-x / 2.0 + x * x / 24.0).ln_1p();
            assert!((v - s).abs() < 1e-14 * s.abs(), "x={x}");
        }
        for &x in &[0.5_f64, 1.0, 3.0, 20.0, 40.0] {
            let naive = (1.0 - (-x).exp()).ln();
            assert!((log_one_minus_exp(x) - naive).abs() < 1e-14 * (1.0 + naive.abs()));
        }
        assert_eq!(log_one_minus_exp(800.0_f64), 0.0);
    }

    #[test]
    fn helpers_work_in_single_precision() {
        let v = one_minus_exp(1e-20_f32);
        assert!((v - 1e-20).abs() < 1e-26);
        assert!(log_one_minus_exp(2.0_f32).is_finite());
    }
}
