//! Replicated power/size studies over scenario grids with deterministic
//! parallel execution.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::calibration::{run_test, Calibration};
use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::rng::{mix, stream};
use crate::scenario::{generate_scenario, Scenario};

/// Which test the study runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestMethod {
    /// Coordinate-flip resampling over a single augmentation.
    Aug,
    /// CRT calibration with fresh conditional draws per replicate.
    AugCrt,
}

impl TestMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            TestMethod::Aug => "aug",
            TestMethod::AugCrt => "aug-crt",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aug" => Ok(TestMethod::Aug),
            "aug-crt" | "aug_crt" | "crt" => Ok(TestMethod::AugCrt),
            other => Err(Error::invalid(format!("unknown method {other:?}"))),
        }
    }
}

/// A grid of scenarios to run with common study parameters.
#[derive(Debug, Clone)]
pub struct StudySpec {
    pub scenarios: Vec<Scenario>,
    pub method: TestMethod,
    pub alpha: f64,
    /// Resamples per test: B for the flip method, M for the CRT.
    pub resamples: usize,
    pub n_reps: usize,
    pub master_seed: u64,
    pub kernel: KernelConfig,
    /// Worker-count hint; None uses the ambient thread pool.
    pub parallelism: Option<usize>,
}

impl StudySpec {
    fn validate(&self) -> Result<()> {
        if self.scenarios.is_empty() {
            return Err(Error::invalid("empty scenario grid"));
        }
        if self.n_reps < 1 {
            return Err(Error::invalid("need at least one replication"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// One grid point of a power study.
#[derive(Debug, Clone)]
pub struct PowerCell {
    pub scenario: Scenario,
    pub rejection_rate: f64,
    pub mc_std_err: f64,
    pub n_reps: usize,
    pub wall_time: Duration,
}

/// Runs n_reps independent replications of (generate, augment, gram,
/// calibrate, decide) and reports the rejection fraction. Replications run
/// in parallel; results are reduced by replication index, so the outcome is
/// a pure function of the arguments regardless of worker count.
pub fn run_cell(
    scenario: &Scenario,
    method: TestMethod,
    alpha: f64,
    resamples: usize,
    n_reps: usize,
    cfg: &KernelConfig,
    seed: u64,
) -> Result<PowerCell> {
    if n_reps < 1 {
        return Err(Error::invalid("need at least one replication"));
    }
    let started = Instant::now();
    let rejections: Vec<bool> = (0..n_reps)
        .into_par_iter()
        .map(|rep| -> Result<bool> {
            let rep_seed = mix(seed, rep as u64);
            let mut gen_rng = stream(mix(rep_seed, 0));
            let (data, model, _truth) = generate_scenario(scenario, &mut gen_rng)?;
            let calibration = match method {
                TestMethod::Aug => Calibration::Randomized { b: resamples },
                TestMethod::AugCrt => Calibration::Crt { m: resamples },
            };
            let out = run_test(
                &data,
                model.as_ref(),
                cfg,
                calibration,
                alpha,
                mix(rep_seed, 1),
            )?;
            Ok(out.reject)
        })
        .collect::<Result<Vec<bool>>>()?;
    let k = rejections.iter().filter(|r| **r).count();
    let rate = k as f64 / n_reps as f64;
    Ok(PowerCell {
        scenario: *scenario,
        rejection_rate: rate,
        mc_std_err: (rate * (1.0 - rate) / n_reps as f64).sqrt(),
        n_reps,
        wall_time: started.elapsed(),
    })
}

/// Maps `run_cell` over the grid in order, with per-cell seeds derived as
/// mix(master_seed, cell_index). `on_cell` sees each finished cell before
/// the next starts, so partial results can be flushed; the first failing
/// cell aborts the study.
pub fn run_study_with(
    spec: &StudySpec,
    mut on_cell: impl FnMut(&PowerCell) -> Result<()> + Send,
) -> Result<Vec<PowerCell>> {
    spec.validate()?;
    let body = |spec: &StudySpec, on_cell: &mut dyn FnMut(&PowerCell) -> Result<()>| {
        let mut cells = Vec::with_capacity(spec.scenarios.len());
        for (idx, scenario) in spec.scenarios.iter().enumerate() {
            let cell = run_cell(
                scenario,
                spec.method,
                spec.alpha,
                spec.resamples,
                spec.n_reps,
                &spec.kernel,
                mix(spec.master_seed, idx as u64),
            )?;
            on_cell(&cell)?;
            cells.push(cell);
        }
        Ok(cells)
    };
    match spec.parallelism {
        Some(workers) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
            pool.install(|| body(spec, &mut on_cell))
        }
        None => body(spec, &mut on_cell),
    }
}

pub fn run_study(spec: &StudySpec) -> Result<Vec<PowerCell>> {
    run_study_with(spec, |_| Ok(()))
}

/// The default grids used by the studies.
pub mod grids {
    use super::*;

    /// r in {-2, -1.5, -1.2, ..., 2} at fixed n, as scanned for Ex1.
    pub const EX1_R_GRID: [f64; 13] = [
        -2.0, -1.5, -1.2, -0.9, -0.6, -0.3, 0.0, 0.3, 0.6, 0.9, 1.2, 1.5, 2.0,
    ];

    /// n in {10, 20, ..., 100}, as scanned for Ex2.
    pub const EX2_N_GRID: [usize; 10] = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100];

    pub const PITMAN_BETA_GRID: [f64; 5] = [1.0, 3.0, 5.0, 7.0, 9.0];
    pub const PITMAN_N_GRID: [usize; 5] = [100, 200, 300, 400, 500];

    /// The Pitman grid in row-major (beta outer, n inner) order: 25 cells.
    pub fn pitman_grid() -> Result<Vec<Scenario>> {
        let mut cells = Vec::new();
        for &beta in &PITMAN_BETA_GRID {
            for &n in &PITMAN_N_GRID {
                cells.push(Scenario::pitman(beta, n)?);
            }
        }
        Ok(cells)
    }
}
