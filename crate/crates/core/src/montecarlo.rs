//! Replicated simulate-then-estimate experiments.
//!
//! Replicate `r` (1-based) draws its path from `replicate_seed(seed, r)`, so a
//! run is bitwise reproducible and independent of how replicates are
//! scheduled: results are merged by replicate index once every task is done.
//!
//! The headline quantity is the scaled product error
//! `√n (θ̂σ̂² - θ₀σ₀²) / (θ₀σ₀²)`, asymptotically `N(0, τ_n²)` for the
//! leave-one-out estimator; `std_stat` divides it by `τ_n` as well.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::designs::Design;
use crate::error::{Error, Result};
use crate::estimation::{
    estimate_cv_fixed_sigma, estimate_cv_fixed_theta, estimate_cv_joint, estimate_ml_joint, standardized_statistic,
    EstimateResult, ParameterBox,
};
use crate::linalg::Matrix;
use crate::regression::estimate_cv_reg;
use crate::simulate::{replicate_seed, sample_path, sample_with_trend, CovarianceParams, TrendSpec};

/// Names accepted by [`ExperimentConfig::preset`].
pub const PRESETS: [&str; 7] = [
    "fig2-n12-minimal",
    "fig2-n12-regular",
    "fig2-n12-maximal",
    "fig2-n50-regular",
    "fig2-n50-maximal",
    "fig2-n200-regular",
    "fig2-n200-maximal",
];

/// Upper bound on histogram bins whatever the data-driven width says.
pub const MAX_BINS: usize = 200;

/// Flag label of a replicate whose estimation failed.
pub const FAILED_FLAG: &str = "failed";

pub const RECORDS_HEADER: &str = "replicate,seed,theta_hat,sigma2_hat,product,std_stat,objective,flags";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DesignSpec {
    Regular,
    /// `gamma` defaults to `1/n`.
    Maximal {
        #[serde(default)]
        gamma: Option<f64>,
    },
    Minimal {
        alpha: f64,
    },
    Points {
        points: Vec<f64>,
    },
}

impl DesignSpec {
    pub fn build(&self, n: usize) -> Result<Design<f64>> {
        match self {
            DesignSpec::Regular => Design::regular(n),
            DesignSpec::Maximal { gamma } => Design::maximal(n, gamma.unwrap_or(1.0 / n as f64)),
            DesignSpec::Minimal { alpha } => Design::minimal(n, *alpha),
            DesignSpec::Points { points } => {
                if points.len() != n {
                    return Err(Error::InvalidParameter(format!(
                        "design lists {} points but n = {n}",
                        points.len()
                    )));
                }
                Design::from_points(points.clone())
            }
        }
    }

    /// `regular`, `maximal[:gamma]`, `minimal[:alpha]` (alpha defaults to 0.5).
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let num = |a: &str| {
            a.parse::<f64>()
                .map_err(|_| Error::InvalidParameter(format!("bad design parameter {a:?}")))
        };
        match (kind, arg) {
            ("regular", None) => Ok(DesignSpec::Regular),
            ("maximal", None) => Ok(DesignSpec::Maximal { gamma: None }),
            ("maximal", Some(a)) => Ok(DesignSpec::Maximal { gamma: Some(num(a)?) }),
            ("minimal", None) => Ok(DesignSpec::Minimal { alpha: 0.5 }),
            ("minimal", Some(a)) => Ok(DesignSpec::Minimal { alpha: num(a)? }),
            _ => Err(Error::InvalidParameter(format!("unknown design spec {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    CvJoint,
    CvFixedSigma,
    CvFixedTheta,
    MlJoint,
    CvRegression,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::CvJoint,
        EstimatorKind::CvFixedSigma,
        EstimatorKind::CvFixedTheta,
        EstimatorKind::MlJoint,
        EstimatorKind::CvRegression,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::CvJoint => "cv-joint",
            EstimatorKind::CvFixedSigma => "cv-fixed-sigma",
            EstimatorKind::CvFixedTheta => "cv-fixed-theta",
            EstimatorKind::MlJoint => "ml-joint",
            EstimatorKind::CvRegression => "cv-regression",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown estimator {s:?}")))
    }
}

/// Polynomial mean `Σ_k β_k t^k`, `k = 0..=degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendConfig {
    pub degree: usize,
    pub beta: Vec<f64>,
}

impl TrendConfig {
    pub fn spec(&self) -> Result<TrendSpec<f64>> {
        TrendSpec::polynomial(self.degree, self.beta.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub design: DesignSpec,
    pub n: usize,
    pub theta0: f64,
    pub sigma0_sq: f64,
    pub replicates: usize,
    #[serde(rename = "box")]
    pub bounds: ParameterBox<f64>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub trend: Option<TrendConfig>,
    /// Pinned variance for `cv-fixed-sigma`; defaults to `sigma0_sq`.
    #[serde(default)]
    pub sigma1_sq: Option<f64>,
    /// Pinned range for `cv-fixed-theta`; defaults to `theta0`.
    #[serde(default)]
    pub theta2: Option<f64>,
}

fn default_name() -> String {
    "experiment".to_string()
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::CvJoint]
}

impl ExperimentConfig {
    /// The seven reference panels: `θ₀ = 3`, `σ₀² = 1`, 2000 replicates,
    /// box `[0.1, 10] × [0.3, 30]`, leave-one-out joint estimation.
    pub fn preset(name: &str) -> Result<Self> {
        let (n, design) = match name {
            "fig2-n12-minimal" => (12, DesignSpec::Minimal { alpha: 0.5 }),
            "fig2-n12-regular" => (12, DesignSpec::Regular),
            "fig2-n12-maximal" => (12, DesignSpec::Maximal { gamma: None }),
            "fig2-n50-regular" => (50, DesignSpec::Regular),
            "fig2-n50-maximal" => (50, DesignSpec::Maximal { gamma: None }),
            "fig2-n200-regular" => (200, DesignSpec::Regular),
            "fig2-n200-maximal" => (200, DesignSpec::Maximal { gamma: None }),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "unknown preset {name:?}; known: {}",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            name: name.to_string(),
            design,
            n,
            theta0: 3.0,
            sigma0_sq: 1.0,
            replicates: 2000,
            bounds: ParameterBox::new(0.1, 10.0, 0.3, 30.0)?,
            estimators: default_estimators(),
            seed: 1,
            trend: None,
            sigma1_sq: None,
            theta2: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("replicates must be at least 1".into()));
        }
        if self.n < 5 {
            return Err(Error::InvalidSize(format!("experiments need n >= 5, got {}", self.n)));
        }
        positive("theta0", self.theta0)?;
        positive("sigma0_sq", self.sigma0_sq)?;
        let b = &self.bounds;
        ParameterBox::new(b.theta_min, b.theta_max, b.sigma2_min, b.sigma2_max)?;
        if let Some(s) = self.sigma1_sq {
            positive("sigma1_sq", s)?;
        }
        if let Some(t) = self.theta2 {
            positive("theta2", t)?;
        }
        if self.estimators.is_empty() {
            return Err(Error::InvalidParameter("no estimator requested".into()));
        }
        for (i, e) in self.estimators.iter().enumerate() {
            if self.estimators[..i].contains(e) {
                return Err(Error::InvalidParameter(format!("estimator {e} listed twice")));
            }
        }
        match &self.trend {
            Some(t) => {
                t.spec()?;
            }
            None if self.estimators.contains(&EstimatorKind::CvRegression) => {
                return Err(Error::InvalidParameter("cv-regression needs a trend".into()));
            }
            None => {}
        }
        Ok(())
    }

    /// Reads a JSON object or flat `key = value` lines (`#` starts a comment).
    ///
    /// Flat keys: `name`, `design` (`regular`, `maximal[:gamma]`,
    /// `minimal[:alpha]`), `n`, `theta0`, `sigma0_sq`, `replicates`,
    /// `box` (`a,A,b,B`), `estimators` (comma list), `seed`,
    /// `trend` (`polynomial:k`), `beta` (comma list), `sigma1_sq`, `theta2`.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::parse(&text).map_err(|e| match e {
            Error::Parse { reason, .. } => Error::Parse {
                path: path.to_path_buf(),
                reason,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let parse_err = |reason: String| Error::Parse {
            path: PathBuf::new(),
            reason,
        };
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| parse_err(e.to_string()))?
        } else {
            parse_flat(text).map_err(|e| match e {
                Error::InvalidParameter(reason) => parse_err(reason),
                other => other,
            })?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn true_product(&self) -> f64 {
        self.theta0 * self.sigma0_sq
    }
}

fn parse_flat(text: &str) -> Result<ExperimentConfig> {
    let bad = |key: &str, v: &str| Error::InvalidParameter(format!("bad value {v:?} for {key}"));
    let list = |key: &str, v: &str| -> Result<Vec<f64>> {
        v.split(',').map(|x| x.trim().parse::<f64>().map_err(|_| bad(key, v))).collect()
    };
    let mut name = default_name();
    let mut design = None;
    let (mut n, mut theta0, mut sigma0_sq, mut replicates) = (None, None, None, None);
    let mut bounds = None;
    let mut estimators = default_estimators();
    let mut seed = 0u64;
    let (mut degree, mut beta) = (None, None);
    let (mut sigma1_sq, mut theta2) = (None, None);
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| Error::InvalidParameter(format!("line {}: expected key = value", lineno + 1)))?;
        let float = || value.parse::<f64>().map_err(|_| bad(key, value));
        match key {
            "name" => name = value.to_string(),
            "design" => design = Some(DesignSpec::parse(value)?),
            "n" => n = Some(value.parse::<usize>().map_err(|_| bad(key, value))?),
            "theta0" => theta0 = Some(float()?),
            "sigma0_sq" => sigma0_sq = Some(float()?),
            "replicates" => replicates = Some(value.parse::<usize>().map_err(|_| bad(key, value))?),
            "box" => {
                let v = list(key, value)?;
                if v.len() != 4 {
                    return Err(bad(key, value));
                }
                bounds = Some(ParameterBox::new(v[0], v[1], v[2], v[3])?);
            }
            "estimators" => {
                estimators = value.split(',').map(str::parse).collect::<Result<_>>()?;
            }
            "seed" => seed = value.parse::<u64>().map_err(|_| bad(key, value))?,
            "trend" => {
                let k = value
                    .strip_prefix("polynomial:")
                    .and_then(|k| k.trim().parse::<usize>().ok())
                    .ok_or_else(|| bad(key, value))?;
                degree = Some(k);
            }
            "beta" => beta = Some(list(key, value)?),
            "sigma1_sq" => sigma1_sq = Some(float()?),
            "theta2" => theta2 = Some(float()?),
            _ => return Err(Error::InvalidParameter(format!("unknown key {key:?}"))),
        }
    }
    let need = |key: &str| Error::InvalidParameter(format!("missing key {key}"));
    let trend = match (degree, beta) {
        (Some(degree), Some(beta)) => Some(TrendConfig { degree, beta }),
        (Some(degree), None) => Some(TrendConfig {
            degree,
            beta: vec![0.0; degree + 1],
        }),
        (None, Some(_)) => return Err(need("trend")),
        (None, None) => None,
    };
    Ok(ExperimentConfig {
        name,
        design: design.ok_or_else(|| need("design"))?,
        n: n.ok_or_else(|| need("n"))?,
        theta0: theta0.ok_or_else(|| need("theta0"))?,
        sigma0_sq: sigma0_sq.ok_or_else(|| need("sigma0_sq"))?,
        replicates: replicates.ok_or_else(|| need("replicates"))?,
        bounds: bounds.ok_or_else(|| need("box"))?,
        estimators,
        seed,
        trend,
        sigma1_sq,
        theta2,
    })
}

/// One estimator applied to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub theta_hat: f64,
    pub sigma2_hat: f64,
    pub product: f64,
    pub std_stat: f64,
    pub objective: f64,
    /// Boundary label, empty when interior, [`FAILED_FLAG`] on failure.
    pub flags: String,
}

impl ReplicateRecord {
    pub fn failed(&self) -> bool {
        self.flags == FAILED_FLAG
    }

    /// Equality that treats matching NaN payloads as equal.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let bits = |r: &Self| {
            [r.theta_hat, r.sigma2_hat, r.product, r.std_stat, r.objective].map(f64::to_bits)
        };
        self.replicate == other.replicate && self.seed == other.seed && self.flags == other.flags && bits(self) == bits(other)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub replicate: usize,
    pub message: String,
}

/// What `summarize` needs besides the records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatContext {
    pub n: usize,
    pub true_product: f64,
    pub tau_sq: f64,
}

impl StatContext {
    /// `√n (p - p₀) / p₀`.
    pub fn scaled(&self, product: f64) -> f64 {
        (self.n as f64).sqrt() * (product - self.true_product) / self.true_product
    }

    pub fn standardized(&self, product: f64) -> f64 {
        standardized_statistic(product, self.true_product, self.n, self.tau_sq.sqrt())
    }
}

/// Moments over the non-failed records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub excluded: usize,
    /// Records with any boundary flag (kept in the moments).
    pub on_boundary: usize,
    /// Moments of `std_stat`.
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// `mean / sqrt(variance / count)`; approximately `N(0, 1)` under correct centering.
    pub z_mean: f64,
    /// Sample variance of `√n (p̂ - p₀) / p₀`, to compare with `τ_n²`.
    pub scaled_variance: f64,
    pub variance_ratio: f64,
    pub median_abs_error: f64,
    pub tau_sq: f64,
}

fn moments(x: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    if x.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    // exact answer when rounding in the mean would otherwise leave dust
    if x.iter().all(|&v| v == x[0]) {
        return (x[0], 0.0, 0.0);
    }
    let mean = x.iter().sum::<f64>() / m;
    let (mut s2, mut s3) = (0.0, 0.0);
    for &v in x {
        let d = v - mean;
        s2 += d * d;
        s3 += d * d * d;
    }
    let variance = if x.len() > 1 { s2 / (m - 1.0) } else { 0.0 };
    let m2 = s2 / m;
    let skewness = if m2 > 0.0 { (s3 / m) / m2.powf(1.5) } else { 0.0 };
    (mean, variance, skewness)
}

fn median(mut x: Vec<f64>) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    x.sort_by(f64::total_cmp);
    let k = x.len() / 2;
    if x.len() % 2 == 1 {
        x[k]
    } else {
        0.5 * (x[k - 1] + x[k])
    }
}

/// Recomputes the summary from scratch; a pure function of the records.
pub fn summarize(records: &[ReplicateRecord], ctx: &StatContext) -> Summary {
    let kept: Vec<&ReplicateRecord> = records.iter().filter(|r| !r.failed()).collect();
    let std: Vec<f64> = kept.iter().map(|r| r.std_stat).collect();
    let scaled: Vec<f64> = kept.iter().map(|r| ctx.scaled(r.product)).collect();
    let (mean, variance, skewness) = moments(&std);
    let (_, scaled_variance, _) = moments(&scaled);
    let z_mean = if variance > 0.0 {
        mean / (variance / std.len() as f64).sqrt()
    } else {
        0.0
    };
    Summary {
        count: kept.len(),
        excluded: records.len() - kept.len(),
        on_boundary: kept.iter().filter(|r| !r.flags.is_empty()).count(),
        mean,
        variance,
        skewness,
        z_mean,
        scaled_variance,
        variance_ratio: scaled_variance / ctx.tau_sq,
        median_abs_error: median(kept.iter().map(|r| (r.product - ctx.true_product).abs()).collect()),
        tau_sq: ctx.tau_sq,
    }
}

/// Histogram of the scaled product error with the `N(0, τ_n²)` density at
/// each bin centre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub bin_width: f64,
    /// `count / (total · width)`.
    pub density: Vec<f64>,
    pub reference_density: Vec<f64>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Freedman–Diaconis width `2 IQR / m^{1/3}`, at most [`MAX_BINS`] bins.
pub fn histogram(values: &[f64], tau_sq: f64) -> Histogram {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    if m == 0 {
        return Histogram {
            edges: vec![],
            counts: vec![],
            bin_width: 0.0,
            density: vec![],
            reference_density: vec![],
        };
    }
    let (lo, hi) = (sorted[0], sorted[m - 1]);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    let fd = 2.0 * iqr / (m as f64).cbrt();
    let bins = if fd > 0.0 {
        (((hi - lo) / fd).ceil() as usize).clamp(1, MAX_BINS)
    } else {
        1
    };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|k| if k == bins { hi } else { lo + k as f64 * width })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in &sorted {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let density = counts.iter().map(|&c| c as f64 / (m as f64 * width)).collect();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * tau_sq).sqrt();
    let reference_density = edges
        .windows(2)
        .map(|e| {
            let c = 0.5 * (e[0] + e[1]);
            norm * (-c * c / (2.0 * tau_sq)).exp()
        })
        .collect();
    Histogram {
        edges,
        counts,
        bin_width: width,
        density,
        reference_density,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<Failure>,
    pub summary: Summary,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub context: StatContext,
    pub estimators: Vec<EstimatorReport>,
}

impl ExperimentReport {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorReport> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Serial,
    /// `threads = None` uses the global rayon pool.
    Parallel { threads: Option<usize> },
}

struct Prepared {
    design: Design<f64>,
    params: CovarianceParams<f64>,
    trend: Option<TrendSpec<f64>>,
    f: Option<Matrix<f64>>,
}

fn run_replicate(cfg: &ExperimentConfig, prep: &Prepared, seed: u64) -> Vec<Result<EstimateResult<f64>>> {
    let data = match &prep.trend {
        Some(t) => sample_with_trend(&prep.design, &prep.params, t, seed),
        None => Ok(sample_path(&prep.design, &prep.params, seed)),
    };
    let b = &cfg.bounds;
    cfg.estimators
        .iter()
        .map(|kind| {
            let y = match &data {
                Ok(y) => y,
                Err(e) => return Err(Error::InvalidParameter(e.to_string())),
            };
            match kind {
                EstimatorKind::CvJoint => estimate_cv_joint(&prep.design, y, b),
                EstimatorKind::CvFixedSigma => estimate_cv_fixed_sigma(
                    &prep.design,
                    y,
                    cfg.sigma1_sq.unwrap_or(cfg.sigma0_sq),
                    (b.theta_min, b.theta_max),
                ),
                EstimatorKind::CvFixedTheta => estimate_cv_fixed_theta(
                    &prep.design,
                    y,
                    cfg.theta2.unwrap_or(cfg.theta0),
                    (b.sigma2_min, b.sigma2_max),
                ),
                EstimatorKind::MlJoint => estimate_ml_joint(&prep.design, y, b),
                EstimatorKind::CvRegression => {
                    let f = prep.f.as_ref().expect("validated: trend present");
                    estimate_cv_reg(&prep.design, y, f, b)
                }
            }
        })
        .collect()
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(config, Execution::Parallel { threads: None })
}

/// Runs every replicate and assembles per-estimator reports. Estimation
/// failures are recorded per replicate and never abort the run.
pub fn run_experiment_with(config: &ExperimentConfig, execution: Execution) -> Result<ExperimentReport> {
    config.validate()?;
    let design = config.design.build(config.n)?;
    let tau_sq = design.tau_squared()?;
    let trend = config.trend.as_ref().map(TrendConfig::spec).transpose()?;
    let f = trend.as_ref().map(|t| t.design_matrix(&design)).transpose()?;
    let prep = Prepared {
        design,
        params: CovarianceParams::new(config.theta0, config.sigma0_sq)?,
        trend,
        f,
    };
    let ctx = StatContext {
        n: config.n,
        true_product: config.true_product(),
        tau_sq,
    };

    let task = |r: usize| {
        let seed = replicate_seed(config.seed, r as u64);
        (seed, run_replicate(config, &prep, seed))
    };
    let indices = 1..=config.replicates;
    let outcomes: Vec<(u64, Vec<Result<EstimateResult<f64>>>)> = match execution {
        Execution::Serial => indices.map(task).collect(),
        Execution::Parallel { threads: None } => indices.into_par_iter().map(task).collect(),
        Execution::Parallel { threads: Some(t) } => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| indices.into_par_iter().map(task).collect())
        }
    };

    let estimators = config
        .estimators
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut records = Vec::with_capacity(outcomes.len());
            let mut failures = Vec::new();
            for (i, (seed, results)) in outcomes.iter().enumerate() {
                let replicate = i + 1;
                records.push(match &results[k] {
                    Ok(est) => ReplicateRecord {
                        replicate,
                        seed: *seed,
                        theta_hat: est.theta_hat,
                        sigma2_hat: est.sigma2_hat,
                        product: est.product,
                        std_stat: ctx.standardized(est.product),
                        objective: est.objective_value,
                        flags: est.boundary_flags.label(),
                    },
                    Err(e) => {
                        log::debug!("{kind} replicate {replicate} failed: {e}");
                        failures.push(Failure {
                            replicate,
                            message: e.to_string(),
                        });
                        ReplicateRecord {
                            replicate,
                            seed: *seed,
                            theta_hat: f64::NAN,
                            sigma2_hat: f64::NAN,
                            product: f64::NAN,
                            std_stat: f64::NAN,
                            objective: f64::NAN,
                            flags: FAILED_FLAG.to_string(),
                        }
                    }
                });
            }
            let summary = summarize(&records, &ctx);
            let scaled: Vec<f64> = records
                .iter()
                .filter(|r| !r.failed())
                .map(|r| ctx.scaled(r.product))
                .collect();
            EstimatorReport {
                estimator: kind,
                histogram: histogram(&scaled, tau_sq),
                records,
                failures,
                summary,
            }
        })
        .collect();

    Ok(ExperimentReport {
        config: config.clone(),
        context: ctx,
        estimators,
    })
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryFile {
    pub config: ExperimentConfig,
    pub tau_sq: f64,
    pub true_product: f64,
    pub estimators: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryEntry {
    pub estimator: EstimatorKind,
    pub records_file: String,
    pub histogram_file: String,
    pub bin_width: f64,
    pub summary: Summary,
    pub failures: Vec<Failure>,
}

/// File names for estimator `k`: the first gets `records.csv` and
/// `histogram.csv`, later ones carry their name as a suffix.
pub fn output_names(k: usize, kind: EstimatorKind) -> (String, String) {
    if k == 0 {
        ("records.csv".into(), "histogram.csv".into())
    } else {
        (format!("records-{kind}.csv"), format!("histogram-{kind}.csv"))
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Writes the run directory: records and histogram CSVs per estimator and
/// one `summary.json`.
pub fn export(report: &ExperimentReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (k, est) in report.estimators.iter().enumerate() {
        let (records_file, histogram_file) = output_names(k, est.estimator);
        write_records(&est.records, &dir.join(&records_file))?;
        write_histogram(&est.histogram, &dir.join(&histogram_file))?;
        entries.push(SummaryEntry {
            estimator: est.estimator,
            records_file,
            histogram_file,
            bin_width: est.histogram.bin_width,
            summary: est.summary.clone(),
            failures: est.failures.clone(),
        });
    }
    let file = SummaryFile {
        config: report.config.clone(),
        tau_sq: report.context.tau_sq,
        true_product: report.context.true_product,
        estimators: entries,
    };
    let path = dir.join("summary.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| Error::io(&path, e.into()))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(&path, e))
}

pub fn write_records(records: &[ReplicateRecord], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{RECORDS_HEADER}").map_err(io)?;
    for r in records {
        writeln!(
            w,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.replicate, r.seed, r.theta_hat, r.sigma2_hat, r.product, r.std_stat, r.objective, r.flags
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_records(path: &Path) -> Result<Vec<ReplicateRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Parse {
        path: path.to_path_buf(),
        reason: format!("line {line}: {what}"),
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(RECORDS_HEADER) {
        return Err(bad(1, "unexpected header"));
    }
    let mut out = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(bad(lineno, &format!("expected 8 columns, found {}", cols.len())));
        }
        let float = |i: usize| cols[i].parse::<f64>().map_err(|_| bad(lineno, &format!("bad number {:?}", cols[i])));
        out.push(ReplicateRecord {
            replicate: cols[0].parse().map_err(|_| bad(lineno, "bad replicate index"))?,
            seed: cols[1].parse().map_err(|_| bad(lineno, "bad seed"))?,
            theta_hat: float(2)?,
            sigma2_hat: float(3)?,
            product: float(4)?,
            std_stat: float(5)?,
            objective: float(6)?,
            flags: cols[7].to_string(),
        });
    }
    Ok(out)
}

pub fn write_histogram(h: &Histogram, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "left,right,count,density,reference_density").map_err(io)?;
    for k in 0..h.counts.len() {
        writeln!(
            w,
            "{:.16e},{:.16e},{},{:.16e},{:.16e}",
            h.edges[k], h.edges[k + 1], h.counts[k], h.density[k], h.reference_density[k]
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_summary(path: &Path) -> Result<SummaryFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, replicates: usize) -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("fig2-n50-regular").unwrap();
        c.n = n;
        c.replicates = replicates;
        c
    }

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            let c = ExperimentConfig::preset(name).unwrap();
            c.validate().unwrap();
            assert_eq!(c.replicates, 2000);
            assert_eq!(c.true_product(), 3.0);
        }
        assert!(ExperimentConfig::preset("fig2-n200-minimal").is_err());
    }

    #[test]
    fn single_replicate_is_reproducible() {
        let c = small(20, 1);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.estimators[0].records.len(), 1);
        assert!(a.estimators[0].records[0].bitwise_eq(&b.estimators[0].records[0]));
    }

    #[test]
    fn std_stat_is_recomputable() {
        let r = run_experiment(&small(30, 20)).unwrap();
        for rec in &r.estimators[0].records {
            let s = standardized_statistic(rec.product, 3.0, 30, r.context.tau_sq.sqrt());
            assert_eq!(s.to_bits(), rec.std_stat.to_bits());
        }
    }

    #[test]
    fn constant_statistics_have_zero_variance() {
        let ctx = StatContext {
            n: 10,
            true_product: 3.0,
            tau_sq: 2.0,
        };
        let recs: Vec<ReplicateRecord> = (1..=5)
            .map(|i| ReplicateRecord {
                replicate: i,
                seed: i as u64,
                theta_hat: 3.0,
                sigma2_hat: 1.1,
                product: 3.3,
                std_stat: ctx.standardized(3.3),
                objective: 0.0,
                flags: String::new(),
            })
            .collect();
        let s = summarize(&recs, &ctx);
        assert_eq!(s.variance, 0.0);
        assert_eq!(s.count, 5);
    }

    #[test]
    fn histogram_counts_everything() {
        let v: Vec<f64> = (0..1000).map(|i| ((i * 7919) % 1000) as f64 / 100.0 - 5.0).collect();
        let h = histogram(&v, 3.0);
        assert_eq!(h.counts.iter().sum::<usize>(), 1000);
        assert_eq!(h.edges.len(), h.counts.len() + 1);
        let mass: f64 = h.density.iter().map(|d| d * h.bin_width).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        let one = histogram(&[2.0, 2.0], 3.0);
        assert_eq!(one.counts, vec![2]);
    }

    #[test]
    fn flat_config_parses() {
        let text = "\
# comment
name = demo
design = maximal:0.05
n = 40
theta0 = 3
sigma0_sq = 1
replicates = 10
box = 0.1, 10, 0.3, 30
estimators = cv-joint, ml-joint, cv-regression
trend = polynomial:1
beta = 1, 2
seed = 9
";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.design, DesignSpec::Maximal { gamma: Some(0.05) });
        assert_eq!(c.estimators.len(), 3);
        assert_eq!(c.trend.as_ref().unwrap().beta, vec![1.0, 2.0]);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(ExperimentConfig::parse(&json).unwrap(), c);
        assert!(ExperimentConfig::parse("design = regular\nn = 10").is_err());
        assert!(ExperimentConfig::parse(&text.replace("trend = polynomial:1\n", "").replace("beta = 1, 2\n", "")).is_err());
    }

    #[test]
    fn rank_deficient_trend_is_rejected_up_front() {
        let mut c = small(12, 3);
        c.trend = Some(TrendConfig {
            degree: 12,
            beta: vec![0.0; 13],
        });
        c.estimators = vec![EstimatorKind::CvJoint, EstimatorKind::CvRegression];
        assert!(run_experiment(&c).is_err());
    }
}
