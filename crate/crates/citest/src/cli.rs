//! Command-line surface: `test` for user data, `power`/`pitman`/`highdim`
//! for the study grids.
//!
//! All randomness flows from the single `--seed` flag; omitting it draws a
//! seed from the OS and prints it so the run can be reproduced. Flags may
//! also be supplied through `--config <file>` with `key = value` lines
//! (explicit flags win). The statistical decision never drives the process
//! exit code: 0 means the tool ran, 2 means the input was rejected.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::RngCore;

use crate::calibration::{run_test, Calibration};
use crate::error::{Error, Result};
use crate::harness::{grids, run_study_with, StudySpec, TestMethod};
use crate::io::{
    power_csv_row, read_dataset_csv, write_outcome_record, ColumnSpec, POWER_CSV_HEADER,
};
use crate::kernel::{BandwidthRule, KernelConfig};
use crate::models::{
    gaussian_linear_model, ConditionalMean, ConditionalModel, NoiseKind, ShiftNoiseModel,
};
use crate::rng::mix;
use crate::scenario::Scenario;
use crate::Matrix;

#[derive(Parser)]
#[command(
    name = "citest",
    about = "Conditional independence testing with model-X augmentation and flip resampling"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test X independent of Y given Z on a CSV dataset.
    Test(TestArgs),
    /// Power/size study over an r-grid (ex1*) or n-grid (ex2*).
    Power(PowerArgs),
    /// Local-alternative study over the (beta, n) grid.
    Pitman(PitmanArgs),
    /// High-dimensional study over a log2(d) grid (ex3*, ex4*).
    Highdim(HighdimArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Calibration: aug (flip resampling) or aug-crt.
    #[arg(long)]
    method: Option<String>,
    /// Resamples per test: B for aug, M for aug-crt.
    #[arg(long, visible_alias = "b")]
    resamples: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Replications per grid cell.
    #[arg(long)]
    n_reps: Option<usize>,
    /// Master seed; omitted: drawn from the OS and printed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; omitted: stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report measured per-cell wall time instead of a deterministic 0.
    #[arg(long)]
    timings: bool,
    /// Kernel scale: inverse-dimension, median, or fixed:<sigma_sq>.
    #[arg(long)]
    sigma_rule: Option<String>,
    /// Key=value file supplying defaults for any long flag.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    /// Headered CSV with x_*/y_*/z_* columns (or explicit column lists).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Explicit X column names (comma separated).
    #[arg(long, value_delimiter = ',')]
    x_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    y_cols: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    z_cols: Vec<String>,
    /// Conditional model: ex1a, ex1b, ex1c, ex2, ex3, pitman, or
    /// gaussian-linear (with --intercept/--coeff/--noise-cov).
    #[arg(long)]
    model: Option<String>,
    /// gaussian-linear intercept, comma separated (default: zeros).
    #[arg(long)]
    intercept: Option<String>,
    /// gaussian-linear coefficients, rows separated by ';'
    /// (default: identity when d_x = d_z, else zeros).
    #[arg(long)]
    coeff: Option<String>,
    /// gaussian-linear noise covariance: scalar s (s*I), comma list
    /// (diagonal), or rows separated by ';' (default: identity).
    #[arg(long)]
    noise_cov: Option<String>,
    /// Calibration: randomized, exact, or crt.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, visible_alias = "b")]
    resamples: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Standardize every coordinate before testing (off by default).
    #[arg(long)]
    standardize: bool,
    /// Kernel scale: inverse-dimension, median, or fixed:<sigma_sq>.
    #[arg(long)]
    sigma_rule: Option<String>,
    /// Write a machine-readable result record here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct PowerArgs {
    /// ex1a, ex1b, ex1c (r-grid) or ex2a, ex2b (n-grid).
    #[arg(long)]
    scenario: Option<String>,
    /// Grid of r values for ex1* (comma separated).
    #[arg(long)]
    r_grid: Option<String>,
    /// Grid of sample sizes for ex2* (comma separated).
    #[arg(long)]
    n_grid: Option<String>,
    /// Sample size for ex1* cells.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct PitmanArgs {
    #[arg(long)]
    beta_grid: Option<String>,
    #[arg(long)]
    n_grid: Option<String>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct HighdimArgs {
    /// ex3a, ex3b (fixed n) or ex4a, ex4b (n = d^2 + 20).
    #[arg(long)]
    scenario: Option<String>,
    /// Grid of log2(d) values (comma separated).
    #[arg(long)]
    log2d_grid: Option<String>,
    /// Sample size for ex3* cells.
    #[arg(long)]
    n: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

/// key = value fallback values for flags.
struct ConfigMap(HashMap<String, String>);

impl ConfigMap {
    fn load(path: Option<&Path>) -> Result<Self> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    Error::invalid(format!(
                        "config line {} is not key = value: {line:?}",
                        lineno + 1
                    ))
                })?;
                map.insert(key.trim().replace('-', "_"), value.trim().to_string());
            }
        }
        Ok(ConfigMap(map))
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(&key.replace('-', "_")) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::invalid(format!("config value for {key} is not valid: {raw:?}"))
            }),
        }
    }
}

fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    cfg: &ConfigMap,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(flag.or(cfg.get(key)?).unwrap_or(default))
}

fn parse_sigma_rule(s: &str) -> Result<KernelConfig> {
    let rule = match s {
        "inverse-dimension" | "1/d" => BandwidthRule::InverseDimension,
        "median" | "median-heuristic" => BandwidthRule::MedianHeuristic,
        other => {
            let raw = other.strip_prefix("fixed:").unwrap_or(other);
            let v: f64 = raw
                .parse()
                .map_err(|_| Error::invalid(format!("bad sigma rule {s:?}")))?;
            BandwidthRule::FixedValue(v)
        }
    };
    Ok(KernelConfig { rule })
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad {what} entry {tok:?}")))
        })
        .collect()
}

fn seed_or_entropy(seed: Option<u64>) -> u64 {
    match seed {
        Some(s) => s,
        None => {
            let s = rand::rngs::OsRng.next_u64();
            eprintln!("seed: {s} (drawn from OS; pass --seed {s} to reproduce)");
            s
        }
    }
}

fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var("CITEST_THREADS") {
        Ok(v) => {
            let k: usize = v
                .parse()
                .map_err(|_| Error::invalid(format!("CITEST_THREADS is not a count: {v:?}")))?;
            Ok(Some(k.max(1)))
        }
        Err(_) => Ok(None),
    }
}

fn parse_matrix_arg(raw: &str, rows: usize, cols: usize, what: &str) -> Result<Matrix> {
    let row_strs: Vec<&str> = raw.split(';').collect();
    if row_strs.len() != rows {
        return Err(Error::invalid(format!(
            "{what} needs {rows} row(s) separated by ';', got {}",
            row_strs.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * cols);
    for row in row_strs {
        let vals = parse_f64_list(row, what)?;
        if vals.len() != cols {
            return Err(Error::invalid(format!(
                "{what} row has {} entries, expected {cols}",
                vals.len()
            )));
        }
        data.extend(vals);
    }
    Matrix::new(rows, cols, data)
}

fn build_model(
    args: &TestArgs,
    cfg: &ConfigMap,
    d_x: usize,
    d_z: usize,
) -> Result<Box<dyn ConditionalModel>> {
    let name: String = resolve(args.model.clone(), cfg, "model", String::new())?;
    if name.is_empty() {
        return Err(Error::invalid(
            "a conditional model is required (--model <name>)",
        ));
    }
    let mixture = NoiseKind::GaussianMixture {
        sd_a: 1.0,
        sd_b: 10.0,
    };
    let univariate = |noise: NoiseKind, mean: ConditionalMean, need_dz: Option<usize>| {
        if d_x != 1 {
            return Err(Error::dims(format!(
                "model {name:?} samples univariate X, data has d_x = {d_x}"
            )));
        }
        if let Some(want) = need_dz {
            if d_z != want {
                return Err(Error::dims(format!(
                    "model {name:?} expects d_z = {want}, data has d_z = {d_z}"
                )));
            }
        }
        Ok(Box::new(ShiftNoiseModel::new(d_z, mean, noise)) as Box<dyn ConditionalModel>)
    };
    match name.as_str() {
        "ex1a" | "pitman" => univariate(
            NoiseKind::Gaussian { sd: 1.0 },
            ConditionalMean::FirstCoordinate,
            Some(1),
        ),
        "ex1b" => univariate(
            NoiseKind::StudentT { df: 4.0 },
            ConditionalMean::FirstCoordinate,
            Some(1),
        ),
        "ex1c" => univariate(NoiseKind::Cauchy, ConditionalMean::FirstCoordinate, Some(1)),
        "ex2" | "ex2a" | "ex2b" => univariate(mixture, ConditionalMean::FirstCoordinate, Some(1)),
        "ex3" | "ex3a" | "ex3b" | "ex4" | "ex4a" | "ex4b" => {
            univariate(mixture, ConditionalMean::AbsSumOverNorm, None)
        }
        "gaussian-linear" => {
            let intercept = match resolve(args.intercept.clone(), cfg, "intercept", String::new())?
            {
                s if s.is_empty() => vec![0.0; d_x],
                s => parse_f64_list(&s, "intercept")?,
            };
            if intercept.len() != d_x {
                return Err(Error::dims(format!(
                    "intercept has {} entries, data has d_x = {d_x}",
                    intercept.len()
                )));
            }
            let coeff = match resolve(args.coeff.clone(), cfg, "coeff", String::new())? {
                s if s.is_empty() => {
                    let mut m = Matrix::zeros(d_x, d_z);
                    if d_x == d_z {
                        for i in 0..d_x {
                            m.row_mut(i)[i] = 1.0;
                        }
                    }
                    m
                }
                s => parse_matrix_arg(&s, d_x, d_z, "coeff")?,
            };
            let noise = match resolve(args.noise_cov.clone(), cfg, "noise-cov", String::new())? {
                s if s.is_empty() => {
                    let mut m = Matrix::zeros(d_x, d_x);
                    for i in 0..d_x {
                        m.row_mut(i)[i] = 1.0;
                    }
                    m
                }
                s if !s.contains(';') => {
                    let vals = parse_f64_list(&s, "noise-cov")?;
                    let diag = match vals.len() {
                        1 => vec![vals[0]; d_x],
                        k if k == d_x => vals,
                        k => {
                            return Err(Error::dims(format!(
                                "noise-cov diagonal has {k} entries, expected {d_x}"
                            )))
                        }
                    };
                    let mut m = Matrix::zeros(d_x, d_x);
                    for (i, v) in diag.iter().enumerate() {
                        m.row_mut(i)[i] = *v;
                    }
                    m
                }
                s => parse_matrix_arg(&s, d_x, d_x, "noise-cov")?,
            };
            Ok(Box::new(gaussian_linear_model(intercept, coeff, noise)?))
        }
        other => Err(Error::invalid(format!("unknown model {other:?}"))),
    }
}

fn cmd_test(args: TestArgs) -> Result<()> {
    let cfg = ConfigMap::load(args.config.as_deref())?;
    let input: PathBuf = match &args.input {
        Some(p) => p.clone(),
        None => PathBuf::from(
            cfg.get::<String>("input")?
                .ok_or_else(|| Error::invalid("the test command requires --input <csv>"))?,
        ),
    };
    let columns = ColumnSpec {
        x: (!args.x_cols.is_empty()).then(|| args.x_cols.clone()),
        y: (!args.y_cols.is_empty()).then(|| args.y_cols.clone()),
        z: (!args.z_cols.is_empty()).then(|| args.z_cols.clone()),
    };
    let mut data = read_dataset_csv(&input, &columns)?;
    let standardize = args.standardize || cfg.get::<bool>("standardize")?.unwrap_or(false);
    if standardize {
        data = data.standardized();
    }

    let model = build_model(&args, &cfg, data.d_x(), data.d_z())?;
    let method: String = resolve(args.method.clone(), &cfg, "method", "randomized".into())?;
    let resamples = resolve(args.resamples, &cfg, "resamples", 500)?;
    let alpha = resolve(args.alpha, &cfg, "alpha", 0.05)?;
    let kernel = parse_sigma_rule(&resolve(
        args.sigma_rule.clone(),
        &cfg,
        "sigma-rule",
        "inverse-dimension".into(),
    )?)?;
    let seed = seed_or_entropy(args.seed.or(cfg.get("seed")?));

    let calibration = match method.as_str() {
        "randomized" => Calibration::Randomized { b: resamples },
        "exact" => Calibration::Exact,
        "crt" => Calibration::Crt { m: resamples },
        other => return Err(Error::invalid(format!("unknown method {other:?}"))),
    };
    let outcome = run_test(&data, model.as_ref(), &kernel, calibration, alpha, seed)?;

    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "n: {}  d_x: {}  d_y: {}  d_z: {}",
        data.n(),
        data.d_x(),
        data.d_y(),
        data.d_z()
    )?;
    writeln!(stdout, "model: {}", model.descriptor())?;
    writeln!(
        stdout,
        "method: {}  resamples: {}  alpha: {}  seed: {}",
        outcome.method, outcome.resamples, outcome.alpha, outcome.seed
    )?;
    writeln!(stdout, "statistic: {}", outcome.statistic)?;
    writeln!(stdout, "p-value: {}", outcome.p_value)?;
    if let Some(c) = outcome.critical_value {
        writeln!(stdout, "critical value: {c}")?;
    }
    writeln!(
        stdout,
        "decision: {} at level {}",
        if outcome.reject {
            "reject conditional independence"
        } else {
            "fail to reject conditional independence"
        },
        outcome.alpha
    )?;

    if let Some(out) = &args.out {
        let mut file = std::fs::File::create(out)?;
        write_outcome_record(&mut file, &outcome, data.n())?;
    }
    Ok(())
}

struct StudyOptions {
    method: TestMethod,
    resamples: usize,
    alpha: f64,
    n_reps: usize,
    seed: u64,
    kernel: KernelConfig,
    out: Option<PathBuf>,
    timings: bool,
}

fn study_options(common: &CommonArgs, default_reps: usize) -> Result<(StudyOptions, ConfigMap)> {
    let cfg = ConfigMap::load(common.config.as_deref())?;
    let method = TestMethod::parse(&resolve(
        common.method.clone(),
        &cfg,
        "method",
        "aug".into(),
    )?)?;
    let opts = StudyOptions {
        method,
        resamples: resolve(common.resamples, &cfg, "resamples", 500)?,
        alpha: resolve(common.alpha, &cfg, "alpha", 0.05)?,
        n_reps: resolve(common.n_reps, &cfg, "n-reps", default_reps)?,
        seed: seed_or_entropy(common.seed.or(cfg.get("seed")?)),
        kernel: parse_sigma_rule(&resolve(
            common.sigma_rule.clone(),
            &cfg,
            "sigma-rule",
            "inverse-dimension".into(),
        )?)?,
        out: common
            .out
            .clone()
            .or(cfg.get::<String>("out")?.map(PathBuf::from)),
        timings: common.timings || cfg.get::<bool>("timings")?.unwrap_or(false),
    };
    Ok((opts, cfg))
}

fn run_and_emit(scenarios: Vec<Scenario>, opts: StudyOptions) -> Result<()> {
    let spec = StudySpec {
        scenarios,
        method: opts.method,
        alpha: opts.alpha,
        resamples: opts.resamples,
        n_reps: opts.n_reps,
        master_seed: opts.seed,
        kernel: opts.kernel,
        parallelism: workers_from_env()?,
    };
    let mut sink: Box<dyn Write + Send> = match &opts.out {
        Some(path) => Box::new(std::fs::File::create(path)?),
        None => Box::new(std::io::stdout()),
    };
    writeln!(sink, "{POWER_CSV_HEADER}")?;
    let mut idx = 0u64;
    run_study_with(&spec, |cell| {
        let row = power_csv_row(&spec, cell, mix(spec.master_seed, idx), opts.timings);
        idx += 1;
        writeln!(sink, "{row}")?;
        sink.flush()?;
        Ok(())
    })?;
    Ok(())
}

fn cmd_power(args: PowerArgs) -> Result<()> {
    let (opts, cfg) = study_options(&args.common, 1000)?;
    let name: String = resolve(args.scenario.clone(), &cfg, "scenario", "ex1a".into())?;
    let scenarios = match name.as_str() {
        "ex1a" | "ex1b" | "ex1c" => {
            let n = resolve(args.n, &cfg, "n", 50)?;
            let r_grid = match resolve(args.r_grid.clone(), &cfg, "r-grid", String::new())? {
                s if s.is_empty() => grids::EX1_R_GRID.to_vec(),
                s => parse_f64_list(&s, "r-grid")?,
            };
            r_grid
                .into_iter()
                .map(|r| match name.as_str() {
                    "ex1a" => Scenario::ex1a(r, n),
                    "ex1b" => Scenario::ex1b(r, n),
                    _ => Scenario::ex1c(r, n),
                })
                .collect::<Result<Vec<_>>>()?
        }
        "ex2a" | "ex2b" => {
            let n_grid = match resolve(args.n_grid.clone(), &cfg, "n-grid", String::new())? {
                s if s.is_empty() => grids::EX2_N_GRID.to_vec(),
                s => parse_usize_list(&s, "n-grid")?,
            };
            n_grid
                .into_iter()
                .map(|n| {
                    if name == "ex2a" {
                        Scenario::ex2a(n)
                    } else {
                        Scenario::ex2b(n)
                    }
                })
                .collect::<Result<Vec<_>>>()?
        }
        other => {
            return Err(Error::invalid(format!(
                "power scans ex1a/ex1b/ex1c/ex2a/ex2b, not {other:?} (see pitman and highdim)"
            )))
        }
    };
    run_and_emit(scenarios, opts)
}

fn cmd_pitman(args: PitmanArgs) -> Result<()> {
    let (opts, cfg) = study_options(&args.common, 1000)?;
    let betas = match resolve(args.beta_grid.clone(), &cfg, "beta-grid", String::new())? {
        s if s.is_empty() => grids::PITMAN_BETA_GRID.to_vec(),
        s => parse_f64_list(&s, "beta-grid")?,
    };
    let ns = match resolve(args.n_grid.clone(), &cfg, "n-grid", String::new())? {
        s if s.is_empty() => grids::PITMAN_N_GRID.to_vec(),
        s => parse_usize_list(&s, "n-grid")?,
    };
    let mut scenarios = Vec::with_capacity(betas.len() * ns.len());
    for &beta in &betas {
        for &n in &ns {
            scenarios.push(Scenario::pitman(beta, n)?);
        }
    }
    run_and_emit(scenarios, opts)
}

fn cmd_highdim(args: HighdimArgs) -> Result<()> {
    let (opts, cfg) = study_options(&args.common, 1000)?;
    let name: String = resolve(args.scenario.clone(), &cfg, "scenario", "ex3a".into())?;
    let default_grid = match name.as_str() {
        "ex3a" | "ex3b" => (1..=10).collect::<Vec<usize>>(),
        "ex4a" | "ex4b" => (1..=5).collect(),
        other => {
            return Err(Error::invalid(format!(
                "highdim scans ex3*/ex4*, not {other:?}"
            )))
        }
    };
    let log2d = match resolve(args.log2d_grid.clone(), &cfg, "log2d-grid", String::new())? {
        s if s.is_empty() => default_grid,
        s => parse_usize_list(&s, "log2d-grid")?,
    };
    let n = resolve(args.n, &cfg, "n", 50)?;
    let scenarios = log2d
        .into_iter()
        .map(|k| {
            let d = 1usize << k;
            match name.as_str() {
                "ex3a" => Scenario::ex3a(d, n),
                "ex3b" => Scenario::ex3b(d, n),
                "ex4a" => Scenario::ex4a(d),
                _ => Scenario::ex4b(d),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    run_and_emit(scenarios, opts)
}

/// Parses argv and runs the selected command.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            std::process::exit(0);
        }
        _ => Error::invalid(e.to_string()),
    })?;
    if let Some(workers) = workers_from_env()? {
        // no-op if a global pool already exists
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global();
    }
    match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Power(args) => cmd_power(args),
        Command::Pitman(args) => cmd_pitman(args),
        Command::Highdim(args) => cmd_highdim(args),
    }
}
