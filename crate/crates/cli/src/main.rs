mod table;

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use oucv_core::estimation::{estimate_profile, CvObjective, MlObjective, SigmaMode};
use oucv_core::linalg::Matrix;
use oucv_core::montecarlo::{
    export, run_experiment_with, DesignSpec, Execution, ExperimentConfig, TrendConfig, PRESETS,
};
use oucv_core::oracle::{dense_ml_neg2loglik, dense_oracle_score, dense_reg_score};
use oucv_core::regression::{reg_decomposition, reg_log_score, RegressionObjective};
use oucv_core::scoring::{log_score, ml_decomposition, ml_neg2loglik, score_decomposition};
use oucv_core::simulate::{sample_path, sample_with_trend};
use oucv_core::{CovarianceParams, Design, Error, ErrorKind, EstimateResult, ParameterBox, Result, TrendSpec};
use serde::Serialize;

use table::read_table;

/// Cross-validation and maximum-likelihood estimation for the
/// Ornstein–Uhlenbeck covariance on [0, 1].
#[derive(Parser, Debug)]
#[command(name = "oucv", version)]
struct Cli {
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Print a design as CSV `index,s,delta` preceded by a `# tau_sq` line.
    Design(DesignArgs),
    /// Sample one path as CSV `index,s,y` (or `index,s,z` with a trend).
    Simulate(SimulateArgs),
    /// Evaluate the leave-one-out score or the Gaussian -2 log-likelihood.
    Score(ScoreArgs),
    /// Estimate (θ, σ²) from a data file; JSON on stdout.
    Estimate(EstimateArgs),
    /// Run a replicated simulate-and-estimate experiment into a directory.
    Experiment(ExperimentArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DesignKind {
    Regular,
    Maximal,
    Minimal,
    File,
}

#[derive(Args, Debug)]
struct DesignArgs {
    /// Design family; `file` reads the points from --points.
    #[arg(long, value_enum)]
    kind: DesignKind,
    /// Number of points (not used with --kind file).
    #[arg(long, required_unless_present = "points")]
    n: Option<usize>,
    /// Maximal-design parameter γ in (0, 1); defaults to 1/n.
    #[arg(long)]
    gamma: Option<f64>,
    /// Minimal-design parameter α in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Points file (one location per row, or a column named `s`).
    #[arg(long)]
    points: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Design as `kind:n[:param]`, e.g. `regular:200`, `maximal:200:0.005`, `minimal:12:0.5`.
    #[arg(long)]
    design: String,
    /// Inverse range θ₀.
    #[arg(long, default_value_t = 3.0)]
    theta: f64,
    /// Variance σ₀².
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mean function: `polynomial:k` (with --beta) or a JSON file `{"degree": k, "beta": [...]}`.
    #[arg(long)]
    trend: Option<String>,
    /// Comma-separated trend coefficients β₀,…,β_k.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    beta: Option<Vec<f64>>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Objective {
    /// Leave-one-out logarithmic score.
    Cv,
    /// Gaussian -2 log-likelihood.
    Ml,
}

#[derive(Args, Debug)]
struct ScoreArgs {
    /// Data CSV with locations and observations (`index,s,y` as written by `simulate`).
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    theta: f64,
    #[arg(long)]
    sigma2: f64,
    #[arg(long, value_enum, default_value_t = Objective::Cv)]
    objective: Objective,
    /// Mean basis for the trend-aware score: `polynomial:k` or a basis-matrix file (cv only).
    #[arg(long)]
    trend: Option<String>,
    /// Also evaluate through the dense O(n³) reference route and report the difference.
    #[arg(long)]
    oracle: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Mode {
    /// Minimize over both θ and σ².
    Joint,
    /// Pin σ² at --sigma1, minimize over θ.
    FixedSigma,
    /// Pin θ at --theta2, minimize over σ².
    FixedTheta,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// Data CSV with locations and observations.
    #[arg(long)]
    data: PathBuf,
    /// Parameter box `θ_min,θ_max,σ²_min,σ²_max`.
    #[arg(long = "box", value_delimiter = ',', num_args = 1, default_value = "0.1,10,0.3,30")]
    bounds: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Mode::Joint)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Objective::Cv)]
    objective: Objective,
    /// Pinned σ² for --mode fixed-sigma.
    #[arg(long, required_if_eq("mode", "fixed-sigma"))]
    sigma1: Option<f64>,
    /// Pinned θ for --mode fixed-theta.
    #[arg(long, required_if_eq("mode", "fixed-theta"))]
    theta2: Option<f64>,
    /// Mean basis: `polynomial:k` or a basis-matrix file (one row per point; cv only).
    #[arg(long)]
    trend: Option<String>,
}

#[derive(Args, Debug)]
struct ExperimentArgs {
    /// Experiment config, JSON or flat `key = value` lines.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in panel: fig2-n12-minimal, fig2-n12-regular, fig2-n12-maximal,
    /// fig2-n50-regular, fig2-n50-maximal, fig2-n200-regular, fig2-n200-maximal.
    #[arg(long)]
    preset: Option<String>,
    /// Run directory; defaults to `runs/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker-thread cap; 1 runs serially.
    #[arg(long)]
    threads: Option<usize>,
    /// Override the base seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the replicate count.
    #[arg(long)]
    replicates: Option<usize>,
}

/// 17 significant digits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn stdout() -> BufWriter<io::StdoutLock<'static>> {
    BufWriter::new(io::stdout().lock())
}

fn io_err(e: io::Error) -> Error {
    Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = stdout();
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| io_err(e.into()))?;
    writeln!(out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

fn read_data(path: &Path) -> Result<(Design<f64>, Vec<f64>)> {
    let t = read_table(path)?;
    if t.cols() < 2 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            reason: "need a location and an observation column".into(),
        });
    }
    Ok((Design::from_points(t.locations())?, t.values()))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("bad {what} {s:?}")))
}

/// `polynomial:k` or a basis-matrix file with one row per design point.
fn trend_matrix(spec: &str, design: &Design<f64>) -> Result<Matrix<f64>> {
    if let Some(k) = spec.strip_prefix("polynomial:") {
        let degree = parse_usize(k, "polynomial degree")?;
        return TrendSpec::polynomial(degree, vec![0.0; degree + 1])?.design_matrix(design);
    }
    let path = Path::new(spec);
    let t = read_table(path)?;
    if t.rows.len() != design.len() {
        return Err(Error::InvalidParameter(format!(
            "{}: {} basis rows for {} points",
            path.display(),
            t.rows.len(),
            design.len()
        )));
    }
    let f = Matrix::from_row_major(t.rows.len(), t.cols(), t.rows.concat());
    oucv_core::simulate::check_full_rank(&f)?;
    Ok(f)
}

fn run_design(a: DesignArgs) -> Result<()> {
    let d = match a.kind {
        DesignKind::File => {
            let path = a
                .points
                .ok_or_else(|| Error::InvalidParameter("--kind file needs --points".into()))?;
            Design::from_points(read_table(&path)?.locations())?
        }
        kind => {
            let n = a.n.ok_or_else(|| Error::InvalidParameter("--n is required".into()))?;
            match kind {
                DesignKind::Regular => Design::regular(n)?,
                DesignKind::Maximal => Design::maximal(n, a.gamma.unwrap_or(1.0 / n as f64))?,
                _ => Design::minimal(n, a.alpha)?,
            }
        }
    };
    let mut out = stdout();
    // τ² needs n ≥ 5; smaller designs print without it
    if let Ok(t) = d.tau_squared() {
        writeln!(out, "# tau_sq = {}", num(t)).map_err(io_err)?;
    }
    writeln!(out, "index,s,delta").map_err(io_err)?;
    for (i, &s) in d.points().iter().enumerate() {
        let delta = if i == 0 { String::new() } else { num(d.gaps()[i - 1]) };
        writeln!(out, "{},{},{}", i + 1, num(s), delta).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn parse_design_arg(s: &str) -> Result<Design<f64>> {
    let mut parts = s.splitn(3, ':');
    let kind = parts.next().unwrap_or_default();
    let n = parse_usize(
        parts
            .next()
            .ok_or_else(|| Error::InvalidParameter(format!("design {s:?} lacks n (use kind:n[:param])")))?,
        "design size",
    )?;
    let spec = match parts.next() {
        Some(p) => DesignSpec::parse(&format!("{kind}:{p}"))?,
        None => DesignSpec::parse(kind)?,
    };
    spec.build(n)
}

fn simulate_trend(a: &SimulateArgs) -> Result<Option<TrendSpec<f64>>> {
    let Some(spec) = &a.trend else {
        if a.beta.is_some() {
            return Err(Error::InvalidParameter("--beta needs --trend".into()));
        }
        return Ok(None);
    };
    let cfg = if let Some(k) = spec.strip_prefix("polynomial:") {
        let degree = parse_usize(k, "polynomial degree")?;
        let beta = a
            .beta
            .clone()
            .ok_or_else(|| Error::InvalidParameter("polynomial trend needs --beta".into()))?;
        TrendConfig { degree, beta }
    } else {
        let path = Path::new(spec);
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
    };
    cfg.spec().map(Some)
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let d = parse_design_arg(&a.design)?;
    let params = CovarianceParams::new(a.theta, a.sigma2)?;
    let (col, values) = match simulate_trend(&a)? {
        Some(t) => ("z", sample_with_trend(&d, &params, &t, a.seed)?),
        None => ("y", sample_path(&d, &params, a.seed)),
    };
    let mut out = stdout();
    writeln!(out, "index,s,{col}").map_err(io_err)?;
    for (i, (s, v)) in d.points().iter().zip(&values).enumerate() {
        writeln!(out, "{},{},{}", i + 1, num(*s), num(*v)).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

#[derive(Serialize)]
struct ScoreOutput {
    objective: Objective,
    trend: Option<String>,
    n: usize,
    theta: f64,
    sigma2: f64,
    value: f64,
    /// `σ²`-free parts of `n log σ² + l + q/σ²`.
    l: f64,
    q: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle_abs_diff: Option<f64>,
}

fn run_score(a: ScoreArgs) -> Result<()> {
    let (d, y) = read_data(&a.data)?;
    let (value, dec, oracle) = match (a.objective, &a.trend) {
        (Objective::Cv, None) => (
            log_score(&d, &y, a.theta, a.sigma2)?,
            score_decomposition(&d, &y, a.theta)?,
            a.oracle.then(|| dense_oracle_score(&d, &y, a.theta, a.sigma2)).transpose()?,
        ),
        (Objective::Ml, None) => (
            ml_neg2loglik(&d, &y, a.theta, a.sigma2)?,
            ml_decomposition(&d, &y, a.theta)?,
            a.oracle.then(|| dense_ml_neg2loglik(&d, &y, a.theta, a.sigma2)).transpose()?,
        ),
        (Objective::Cv, Some(spec)) => {
            let f = trend_matrix(spec, &d)?;
            (
                reg_log_score(&d, &y, a.theta, a.sigma2, &f)?.value,
                reg_decomposition(&d, &y, a.theta, &f)?,
                a.oracle.then(|| dense_reg_score(&d, &y, a.theta, a.sigma2, &f)).transpose()?,
            )
        }
        (Objective::Ml, Some(_)) => {
            return Err(Error::InvalidParameter("--trend is only available with --objective cv".into()))
        }
    };
    print_json(&ScoreOutput {
        objective: a.objective,
        trend: a.trend,
        n: d.len(),
        theta: a.theta,
        sigma2: a.sigma2,
        value,
        l: dec.l,
        q: dec.q,
        oracle_value: oracle,
        oracle_abs_diff: oracle.map(|o| (o - value).abs()),
    })
}

#[derive(Serialize)]
struct EstimateOutput {
    objective: Objective,
    mode: Mode,
    trend: Option<String>,
    n: usize,
    #[serde(flatten)]
    result: EstimateResult<f64>,
    boundary: String,
}

fn run_estimate(a: EstimateArgs) -> Result<()> {
    let [tmin, tmax, smin, smax] = a.bounds[..] else {
        return Err(Error::InvalidParameter(format!(
            "--box needs 4 values θ_min,θ_max,σ²_min,σ²_max, got {}",
            a.bounds.len()
        )));
    };
    let bounds = ParameterBox::new(tmin, tmax, smin, smax)?;
    let (d, y) = read_data(&a.data)?;
    let (theta_lo, theta_hi, sigma) = match a.mode {
        Mode::Joint => (tmin, tmax, SigmaMode::Profile { min: smin, max: smax }),
        Mode::FixedSigma => {
            let s = a.sigma1.ok_or_else(|| Error::InvalidParameter("--sigma1 is required".into()))?;
            (tmin, tmax, SigmaMode::Fixed(s))
        }
        Mode::FixedTheta => {
            let t = a.theta2.ok_or_else(|| Error::InvalidParameter("--theta2 is required".into()))?;
            (t, t, SigmaMode::Profile { min: smin, max: smax })
        }
    };
    log::info!("estimating on {} points, box {bounds:?}", d.len());
    let result = match (a.objective, &a.trend) {
        (Objective::Cv, None) => estimate_profile(&CvObjective { design: &d, y: &y }, theta_lo, theta_hi, sigma)?,
        (Objective::Ml, None) => estimate_profile(&MlObjective { design: &d, y: &y }, theta_lo, theta_hi, sigma)?,
        (Objective::Cv, Some(spec)) => {
            let f = trend_matrix(spec, &d)?;
            estimate_profile(&RegressionObjective { design: &d, z: &y, f: &f }, theta_lo, theta_hi, sigma)?
        }
        (Objective::Ml, Some(_)) => {
            return Err(Error::InvalidParameter("--trend is only available with --objective cv".into()))
        }
    };
    print_json(&EstimateOutput {
        objective: a.objective,
        mode: a.mode,
        trend: a.trend,
        n: d.len(),
        boundary: result.boundary_flags.label(),
        result,
    })
}

fn run_experiment_cmd(a: ExperimentArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => {
            return Err(Error::InvalidParameter(format!(
                "need --config or --preset ({})",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    cfg.validate()?;
    let execution = match a.threads {
        Some(0) => return Err(Error::InvalidParameter("--threads must be at least 1".into())),
        Some(1) => Execution::Serial,
        threads => Execution::Parallel { threads },
    };
    let dir = a.out.unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    log::info!("running {} ({} replicates) into {}", cfg.name, cfg.replicates, dir.display());
    let report = run_experiment_with(&cfg, execution)?;
    export(&report, &dir)?;
    for est in &report.estimators {
        let s = &est.summary;
        log::info!(
            "{}: {} records, {} excluded, scaled variance {:.4} (tau_sq {:.4})",
            est.estimator,
            s.count,
            s.excluded,
            s.scaled_variance,
            s.tau_sq
        );
    }
    let summary = oucv_core::montecarlo::read_summary(&dir.join("summary.json"))?;
    print_json(&summary)
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Domain => 1,
        ErrorKind::Io => 2,
        ErrorKind::Numerical => 3,
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return if e.kind() == K::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitCode::from(1)
                } else {
                    ExitCode::SUCCESS
                };
            }
            // usage errors are domain errors
            let text = e.to_string();
            let message = text
                .lines()
                .take_while(|l| !l.trim().is_empty())
                .map(str::trim)
                .collect::<Vec<_>>()
                .join(" ");
            report("usage", message.trim_start_matches("error: "));
            return ExitCode::from(1);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Design(a) => run_design(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Score(a) => run_score(a),
        Command::Estimate(a) => run_estimate(a),
        Command::Experiment(a) => run_experiment_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.kind();
            let label = match kind {
                ErrorKind::Domain => "domain",
                ErrorKind::Io => "io",
                ErrorKind::Numerical => "numerical",
            };
            report(label, &e.to_string());
            ExitCode::from(exit_code(kind))
        }
    }
}
