//! Conditional independence testing via model-X augmentation.
//!
//! Given observations of (X, Y, Z) and a sampler for the conditional law of
//! X given Z, the test measures the kernel discrepancy between the sample
//! and its conditionally-independent variant (X', Y, Z) with a Gaussian
//! kernel, and calibrates it by coordinate-flip resampling over a single
//! precomputed Gram matrix. A simulation harness reproduces the reference
//! power studies at desk scale.

pub mod calibration;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod io;
pub mod kernel;
pub mod models;
pub mod rng;
pub mod scenario;

pub use calibration::{
    critical_value, crt_p_value, exact_p_value, randomized_p_value, resample_statistic, run_test,
    Calibration, FlipVector, Method, TestOutcome, MAX_EXACT_N,
};
pub use dataset::{AugmentedDataset, Dataset, Matrix};
pub use error::{Error, Result};
pub use estimator::{
    augment, estimate_statistic, population_statistic_mc, PopulationEstimate, Statistic,
};
pub use harness::{run_cell, run_study, run_study_with, PowerCell, StudySpec, TestMethod};
pub use kernel::{
    build_gram, core_term, gaussian_kernel, gram_build_count, BandwidthRule, GramMatrix2n,
    KernelConfig,
};
pub use models::{gaussian_linear_model, ConditionalModel, GaussianLinearModel};
pub use scenario::{generate_scenario, pitman_mixture, Scenario, ScenarioName, Truth};
