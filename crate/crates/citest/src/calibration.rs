//! Test calibration: coordinate-flip resampling over the shared Gram matrix,
//! exact and randomized conditional p-values, critical values, and the
//! CRT-calibrated baseline.

use rand::Rng;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimator::{
    augment, estimate_statistic, pair_sum_fixed, statistic_from_fixed, CoreTable,
};
use crate::kernel::{build_gram, GramMatrix2n, KernelConfig};
use crate::models::ConditionalModel;
use crate::rng::{mix, stream};

/// Largest n for which full 2^n flip enumeration is allowed.
pub const MAX_EXACT_N: usize = 20;

/// An element of {0,1}^n: bit i = 1 keeps observation i as (X_i, X_i'),
/// bit i = 0 exchanges the roles of X_i and X_i'.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlipVector {
    bits: Vec<bool>,
}

impl FlipVector {
    pub fn new(bits: Vec<bool>) -> Self {
        FlipVector { bits }
    }

    /// The identity element (all ones): no observation is exchanged.
    pub fn identity(n: usize) -> Self {
        FlipVector {
            bits: vec![true; n],
        }
    }

    /// Uniform draw from {0,1}^n.
    pub fn random(n: usize, rng: &mut impl Rng) -> Self {
        FlipVector {
            bits: (0..n).map(|_| rng.gen::<bool>()).collect(),
        }
    }

    /// Bit i of `mask` becomes entry i; used to enumerate all flips.
    pub fn from_mask(mask: u64, n: usize) -> Self {
        FlipVector {
            bits: (0..n).map(|i| (mask >> i) & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    #[inline]
    pub fn bit(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
}

/// Calibration method used to produce a test outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    ExactFlip,
    RandomizedFlip,
    Crt,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::ExactFlip => "exact",
            Method::RandomizedFlip => "randomized",
            Method::Crt => "crt",
        };
        f.write_str(s)
    }
}

/// Result of a calibrated test.
#[derive(Debug, Clone, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    /// In (0, 1]; for the randomized method, on the grid k/(B+1).
    pub p_value: f64,
    pub method: Method,
    /// B for the flip methods, M for the CRT.
    pub resamples: usize,
    /// Empirical (1 - alpha)-quantile of the resampled statistics, when the
    /// method produces them.
    pub critical_value: Option<f64>,
    pub alpha: f64,
    pub reject: bool,
    pub seed: u64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "alpha must be in (0, 1), got {alpha}"
        )))
    }
}

/// The resampled statistic for flip vector pi, computed by index relabeling
/// over the shared Gram matrix: no kernel re-evaluation, O(n^2) time.
pub fn resample_statistic(gram: &GramMatrix2n, pi: &FlipVector) -> Result<f64> {
    if pi.len() != gram.n() {
        return Err(Error::dims(format!(
            "flip vector has length {}, gram has n = {}",
            pi.len(),
            gram.n()
        )));
    }
    Ok(statistic_from_fixed(
        pair_sum_fixed(gram, pi.bits()),
        gram.n(),
    ))
}

/// Exact conditional p-value: the fraction of all 2^n flip vectors (identity
/// included) whose resampled statistic is at least the observed one.
pub fn exact_p_value(gram: &GramMatrix2n, alpha: f64) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    let n = gram.n();
    if n > MAX_EXACT_N {
        return Err(Error::ExactLimitExceeded {
            n,
            max: MAX_EXACT_N,
        });
    }
    let observed = estimate_statistic(gram)?.value;
    let total: u64 = 1 << n;

    use rayon::prelude::*;
    let table = CoreTable::from_gram(gram);
    let stats: Vec<f64> = (0..total)
        .into_par_iter()
        .map(|mask| table.statistic(FlipVector::from_mask(mask, n).bits()))
        .collect();
    let count = stats.iter().filter(|s| **s >= observed).count();
    let p_value = count as f64 / total as f64;

    let mut sorted = stats;
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let critical = empirical_quantile_inf(&sorted, alpha)?;

    Ok(TestOutcome {
        statistic: observed,
        p_value,
        method: Method::ExactFlip,
        resamples: total as usize,
        critical_value: Some(critical),
        alpha,
        reject: p_value < alpha,
        seed: 0,
    })
}

/// Randomized p-value from B uniform flip draws, with the add-one
/// convention and inclusive ties:
/// p = (1 + #{resampled >= observed}) / (B + 1).
pub fn randomized_p_value(
    gram: &GramMatrix2n,
    b: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if b < 1 {
        return Err(Error::invalid("need at least one resample"));
    }
    let n = gram.n();
    let observed = estimate_statistic(gram)?.value;
    let table = CoreTable::from_gram(gram);
    let mut rng = stream(seed);
    let mut count = 0usize;
    let mut stats = Vec::with_capacity(b);
    for _ in 0..b {
        let pi = FlipVector::random(n, &mut rng);
        let s = table.statistic(pi.bits());
        if s >= observed {
            count += 1;
        }
        stats.push(s);
    }
    let p_value = (1 + count) as f64 / (b + 1) as f64;
    stats.sort_unstable_by(|a, b| a.total_cmp(b));
    let critical = empirical_quantile_inf(&stats, alpha)?;
    Ok(TestOutcome {
        statistic: observed,
        p_value,
        method: Method::RandomizedFlip,
        resamples: b,
        critical_value: Some(critical),
        alpha,
        reject: p_value < alpha,
        seed,
    })
}

/// inf{t : F_hat(t) >= 1 - alpha} over an ascending-sorted sample: the
/// k-th smallest value with k = ceil(B (1 - alpha)), clamped to [1, B].
pub fn empirical_quantile_inf(sorted: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if sorted.is_empty() {
        return Err(Error::invalid("no resampled statistics"));
    }
    let b = sorted.len() as f64;
    let k = (b * (1.0 - alpha)).ceil() as usize;
    Ok(sorted[k.clamp(1, sorted.len()) - 1])
}

/// Critical value from B uniform flip draws: the empirical (1 - alpha)
/// quantile (inf form) of the resampled statistics. Always bounded by
/// 2 / (alpha (n - 1)).
pub fn critical_value(gram: &GramMatrix2n, b: usize, alpha: f64, seed: u64) -> Result<f64> {
    check_alpha(alpha)?;
    if b < 1 {
        return Err(Error::invalid("need at least one resample"));
    }
    let n = gram.n();
    let table = CoreTable::from_gram(gram);
    let mut rng = stream(seed);
    let mut stats: Vec<f64> = (0..b)
        .map(|_| table.statistic(FlipVector::random(n, &mut rng).bits()))
        .collect();
    stats.sort_unstable_by(|a, b| a.total_cmp(b));
    empirical_quantile_inf(&stats, alpha)
}

/// CRT-calibrated p-value: the reference statistics come from fresh draws of
/// the X column (and a fresh augmentation) instead of coordinate flips, so
/// every replicate pays a full Gram rebuild.
pub fn crt_p_value(
    data: &Dataset,
    model: &dyn ConditionalModel,
    cfg: &KernelConfig,
    m: usize,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome> {
    check_alpha(alpha)?;
    if m < 1 {
        return Err(Error::invalid("need at least one CRT replicate"));
    }
    let mut rng = stream(seed);
    let aug = augment(data, model, &mut rng)?;
    let observed = estimate_statistic(&build_gram(&aug, cfg)?)?.value;

    let n = data.n();
    let mut count = 0usize;
    let mut stats = Vec::with_capacity(m);
    for _ in 0..m {
        let mut x_new = crate::dataset::Matrix::zeros(n, data.d_x());
        for i in 0..n {
            model.sample_into(data.z().row(i), x_new.row_mut(i), &mut rng)?;
        }
        let replaced = data.with_x(x_new)?;
        let aug_m = augment(&replaced, model, &mut rng)?;
        let t = estimate_statistic(&build_gram(&aug_m, cfg)?)?.value;
        if t >= observed {
            count += 1;
        }
        stats.push(t);
    }
    let p_value = (1 + count) as f64 / (m + 1) as f64;
    stats.sort_unstable_by(|a, b| a.total_cmp(b));
    let critical = empirical_quantile_inf(&stats, alpha)?;
    Ok(TestOutcome {
        statistic: observed,
        p_value,
        method: Method::Crt,
        resamples: m,
        critical_value: Some(critical),
        alpha,
        reject: p_value < alpha,
        seed,
    })
}

/// How a single test is calibrated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Calibration {
    Exact,
    Randomized { b: usize },
    Crt { m: usize },
}

/// Full test pipeline: augment once, build the Gram matrix once, calibrate.
/// (The CRT route necessarily rebuilds per replicate.)
pub fn run_test(
    data: &Dataset,
    model: &dyn ConditionalModel,
    cfg: &KernelConfig,
    calibration: Calibration,
    alpha: f64,
    seed: u64,
) -> Result<TestOutcome> {
    match calibration {
        Calibration::Crt { m } => crt_p_value(data, model, cfg, m, alpha, seed),
        _ => {
            let mut rng = stream(mix(seed, 0));
            let aug = augment(data, model, &mut rng)?;
            let gram = build_gram(&aug, cfg)?;
            let mut out = match calibration {
                Calibration::Exact => exact_p_value(&gram, alpha)?,
                Calibration::Randomized { b } => randomized_p_value(&gram, b, alpha, mix(seed, 1))?,
                Calibration::Crt { .. } => unreachable!(),
            };
            out.seed = seed;
            Ok(out)
        }
    }
}
