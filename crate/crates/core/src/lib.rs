//! Fixed-domain cross-validation and maximum-likelihood estimation for the
//! one-dimensional exponential-covariance (Ornstein–Uhlenbeck) Gaussian process.
//!
//! The numerical core ([`designs`], [`simulate`], [`scoring`], [`estimation`],
//! [`regression`]) is generic over the floating-point type through [`Scalar`];
//! the Monte Carlo harness in [`montecarlo`] runs in `f64`. Concrete aliases
//! for both precisions live at the crate root.
//!
//! Every score and likelihood evaluation exploits the tridiagonal precision
//! matrix of the exponential kernel and runs in `O(n)`; the dense `O(n³)`
//! routes in [`oracle`] exist to cross-check them.

pub mod designs;
pub mod error;
pub mod estimation;
pub mod linalg;
pub mod montecarlo;
pub mod numeric;
pub mod oracle;
pub mod regression;
pub mod scoring;
pub mod simulate;

pub use designs::{Design, GapProfile};
pub use error::{Error, ErrorKind, Result};
pub use estimation::{BoundaryFlags, EstimateResult, ParameterBox};
pub use numeric::Scalar;
pub use regression::RegressionScore;
pub use scoring::{LooSummary, Precision, ScoreDecomposition};
pub use simulate::{CovarianceParams, TrendSpec};

pub type DesignF32 = Design<f32>;
pub type DesignF64 = Design<f64>;
pub type ParameterBoxF32 = ParameterBox<f32>;
pub type ParameterBoxF64 = ParameterBox<f64>;
pub type EstimateResultF32 = EstimateResult<f32>;
pub type EstimateResultF64 = EstimateResult<f64>;
pub type ScoreDecompositionF32 = ScoreDecomposition<f32>;
pub type ScoreDecompositionF64 = ScoreDecomposition<f64>;
pub type CovarianceParamsF32 = CovarianceParams<f32>;
pub type CovarianceParamsF64 = CovarianceParams<f64>;
pub type RegressionScoreF64 = RegressionScore<f64>;
