//! Gaussian kernel, bandwidth resolution, and the 2n x 2n Gram matrix over
//! an augmented sample.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::dataset::AugmentedDataset;
use crate::error::{Error, Result};

/// How the kernel scale sigma^2 is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BandwidthRule {
    /// Use the given sigma^2 as-is.
    FixedValue(f64),
    /// sigma^2 = 1/d with d = d_x + d_y + d_z, i.e. exp(-||.||^2 / 2d).
    InverseDimension,
    /// sigma^2 = 1 / median of pairwise squared distances over the 2n points.
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub rule: BandwidthRule,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            rule: BandwidthRule::InverseDimension,
        }
    }
}

impl KernelConfig {
    pub fn fixed(sigma_sq: f64) -> Self {
        KernelConfig {
            rule: BandwidthRule::FixedValue(sigma_sq),
        }
    }

    /// Resolves sigma^2 from the total observation dimension alone.
    /// Fails for the median heuristic, which needs data.
    pub fn resolve_for_dim(&self, dim_total: usize) -> Result<f64> {
        match self.rule {
            BandwidthRule::FixedValue(s) => {
                if s > 0.0 && s.is_finite() {
                    Ok(s)
                } else {
                    Err(Error::invalid(format!(
                        "sigma_sq must be positive, got {s}"
                    )))
                }
            }
            BandwidthRule::InverseDimension => {
                if dim_total == 0 {
                    Err(Error::invalid("total dimension is zero"))
                } else {
                    Ok(1.0 / dim_total as f64)
                }
            }
            BandwidthRule::MedianHeuristic => Err(Error::invalid(
                "median heuristic needs a dataset to resolve sigma_sq",
            )),
        }
    }

    /// Resolves sigma^2 against an augmented dataset.
    pub fn resolve(&self, aug: &AugmentedDataset) -> Result<f64> {
        match self.rule {
            BandwidthRule::MedianHeuristic => {
                let pts = aug.interleaved_points();
                let m = pts.rows();
                let mut d2: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
                for a in 0..m {
                    for b in 0..a {
                        d2.push(squared_distance(pts.row(a), pts.row(b)));
                    }
                }
                let mid = d2.len() / 2;
                let (_, med, _) = d2.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
                if *med > 0.0 {
                    Ok(1.0 / *med)
                } else {
                    Err(Error::invalid(
                        "median pairwise distance is zero; data is degenerate",
                    ))
                }
            }
            _ => self.resolve_for_dim(aug.base().dim_total()),
        }
    }
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        let d = a - b;
        acc += d * d;
    }
    acc
}

#[inline]
pub(crate) fn kernel_from_dist2(dist2: f64, sigma_sq: f64) -> f64 {
    (-0.5 * sigma_sq * dist2).exp()
}

/// Gaussian kernel K(x, y) = exp(-sigma^2/2 * ||x - y||^2), in (0, 1].
pub fn gaussian_kernel(x: &[f64], y: &[f64], sigma_sq: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims(format!(
            "kernel arguments have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if sigma_sq <= 0.0 || !sigma_sq.is_finite() {
        return Err(Error::invalid(format!(
            "sigma_sq must be positive, got {sigma_sq}"
        )));
    }
    Ok(kernel_from_dist2(squared_distance(x, y), sigma_sq))
}

/// The single combine expression for the U-statistic core. Every code path
/// (direct, estimator sum, resampling view) must go through this so that
/// equal inputs produce bit-equal outputs. The grouping makes the value
/// exactly invariant under pair orientation and exactly negated under role
/// exchange, since IEEE addition is commutative.
#[inline]
pub(crate) fn core_combine(k_uu: f64, k_upup: f64, k_uup: f64, k_upu: f64) -> f64 {
    (k_uu + k_upup) - (k_uup + k_upu)
}

static GRAM_BUILDS: AtomicU64 = AtomicU64::new(0);

/// Number of Gram matrices constructed so far in this process.
/// Instrumentation for asserting distance reuse in the resampling step.
pub fn gram_build_count() -> u64 {
    GRAM_BUILDS.load(Ordering::Relaxed)
}

/// Symmetric 2n x 2n kernel matrix over the interleaved points
/// {V_i, V_i'}: entry (2i, 2j) = K(V_i, V_j), (2i+1, 2j+1) = K(V_i', V_j'),
/// and so on. Immutable after construction; shared read-only by resampling.
#[derive(Debug, Clone)]
pub struct GramMatrix2n {
    n: usize,
    sigma_sq: f64,
    values: Vec<f64>,
}

impl GramMatrix2n {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    /// Entry (a, b) over the interleaved 0..2n point indexing.
    pub fn value_at(&self, a: usize, b: usize) -> f64 {
        let m = 2 * self.n;
        assert!(a < m && b < m, "gram index out of range");
        self.values[a * m + b]
    }

    #[inline]
    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Builds the Gram matrix of an augmented dataset. Each pairwise kernel is
/// evaluated once; the resampling step reuses the matrix with no further
/// kernel evaluations.
pub fn build_gram(aug: &AugmentedDataset, cfg: &KernelConfig) -> Result<GramMatrix2n> {
    let n = aug.n();
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let sigma_sq = cfg.resolve(aug)?;
    let pts = aug.interleaved_points();
    let m = 2 * n;
    let mut values = vec![0.0; m * m];
    for a in 0..m {
        values[a * m + a] = 1.0;
        for b in 0..a {
            let k = kernel_from_dist2(squared_distance(pts.row(a), pts.row(b)), sigma_sq);
            values[a * m + b] = k;
            values[b * m + a] = k;
        }
    }
    GRAM_BUILDS.fetch_add(1, Ordering::Relaxed);
    Ok(GramMatrix2n {
        n,
        sigma_sq,
        values,
    })
}

/// U-statistic core for observation pair (i, j), read off the Gram matrix:
/// K(V_i, V_j) + K(V_i', V_j') - K(V_i, V_j') - K(V_i', V_j).
pub fn core_term(gram: &GramMatrix2n, i: usize, j: usize) -> Result<f64> {
    let n = gram.n;
    if i >= n || j >= n {
        return Err(Error::invalid(format!(
            "pair index ({i}, {j}) out of range for n = {n}"
        )));
    }
    if i == j {
        return Err(Error::invalid(
            "core term requires two distinct observations",
        ));
    }
    let m = 2 * n;
    let v = &gram.values;
    Ok(core_combine(
        v[2 * i * m + 2 * j],
        v[(2 * i + 1) * m + 2 * j + 1],
        v[2 * i * m + 2 * j + 1],
        v[(2 * i + 1) * m + 2 * j],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, Matrix};
    use proptest::prelude::*;
    use rand::Rng;

    fn aug_from(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>, xp: Vec<f64>) -> AugmentedDataset {
        let n = x.len();
        let base = Dataset::new(
            Matrix::new(n, 1, x).unwrap(),
            Matrix::new(n, 1, y).unwrap(),
            Matrix::new(n, 1, z).unwrap(),
        )
        .unwrap();
        AugmentedDataset::new(base, Matrix::new(n, 1, xp).unwrap()).unwrap()
    }

    fn random_aug(n: usize, d: (usize, usize, usize), seed: u64) -> AugmentedDataset {
        let mut rng = crate::rng::stream(seed);
        let fill = |rng: &mut rand_chacha::ChaCha8Rng, rows: usize, cols: usize| {
            Matrix::new(
                rows,
                cols,
                (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )
            .unwrap()
        };
        let base = Dataset::new(
            fill(&mut rng, n, d.0),
            fill(&mut rng, n, d.1),
            fill(&mut rng, n, d.2),
        )
        .unwrap();
        let xp = fill(&mut rng, n, d.0);
        AugmentedDataset::new(base, xp).unwrap()
    }

    #[test]
    fn kernel_at_zero_distance_is_one() {
        let x = vec![1.5, -2.0, 0.25];
        assert_eq!(gaussian_kernel(&x, &x, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn kernel_closed_form() {
        // ||(1,0)-(0,1)||^2 = 2, sigma^2 = 1 -> exp(-1)
        let k = gaussian_kernel(&[1.0, 0.0], &[0.0, 1.0], 1.0).unwrap();
        assert!((k - (-1.0f64).exp()).abs() < 1e-15);
        assert!((k - 0.3678794).abs() < 1e-6);
    }

    #[test]
    fn kernel_matches_componentwise_oracle_dim7() {
        let mut rng = crate::rng::stream(11);
        for _ in 0..20 {
            let x: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let y: Vec<f64> = (0..7).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let sigma_sq = rng.gen_range(0.05..4.0);
            // independent scalar re-evaluation, term by term
            let mut d2 = 0.0;
            for t in 0..7 {
                d2 += (x[t] - y[t]) * (x[t] - y[t]);
            }
            let expect = (-sigma_sq / 2.0 * d2).exp();
            let got = gaussian_kernel(&x, &y, sigma_sq).unwrap();
            assert!((got - expect).abs() <= 1e-15 * expect.max(1.0));
        }
    }

    #[test]
    fn kernel_rejects_bad_input() {
        assert!(gaussian_kernel(&[1.0], &[1.0, 2.0], 1.0).is_err());
        assert!(gaussian_kernel(&[1.0], &[1.0], 0.0).is_err());
        assert!(gaussian_kernel(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn gram_of_identical_points_is_all_ones() {
        let aug = aug_from(
            vec![3.0, 3.0],
            vec![1.0, 1.0],
            vec![2.0, 2.0],
            vec![3.0, 3.0],
        );
        let gram = build_gram(&aug, &KernelConfig::default()).unwrap();
        for a in 0..4 {
            for b in 0..4 {
                assert_eq!(gram.value_at(a, b), 1.0);
            }
        }
    }

    #[test]
    fn gram_rejects_single_observation() {
        let aug = aug_from(vec![0.0], vec![0.0], vec![0.0], vec![1.0]);
        assert!(build_gram(&aug, &KernelConfig::default()).is_err());
    }

    #[test]
    fn cross_entry_depends_only_on_x_displacement() {
        // Shared Y, Z coordinates cancel: entry (2i, 2i+1) = exp(-s/2 |X_i - X_i'|^2)
        let aug = random_aug(4, (2, 1, 3), 5);
        let cfg = KernelConfig::fixed(0.7);
        let gram = build_gram(&aug, &cfg).unwrap();
        for i in 0..4 {
            let d2 = squared_distance(aug.base().x().row(i), aug.x_prime().row(i));
            assert_eq!(gram.value_at(2 * i, 2 * i + 1), (-0.35 * d2).exp());
        }
    }

    #[test]
    fn gram_matches_double_loop_oracle() {
        let aug = random_aug(5, (2, 1, 2), 42);
        let cfg = KernelConfig::fixed(0.9);
        let gram = build_gram(&aug, &cfg).unwrap();
        let pts = aug.interleaved_points();
        for a in 0..10 {
            for b in 0..10 {
                let expect = gaussian_kernel(pts.row(a), pts.row(b), 0.9).unwrap();
                assert_eq!(gram.value_at(a, b), expect);
            }
        }
    }

    #[test]
    fn inverse_dimension_rule() {
        let aug = random_aug(3, (2, 1, 4), 1);
        let cfg = KernelConfig::default();
        assert_eq!(cfg.resolve(&aug).unwrap(), 1.0 / 7.0);
    }

    #[test]
    fn median_heuristic_resolves_positive() {
        let aug = random_aug(6, (1, 1, 1), 2);
        let cfg = KernelConfig {
            rule: BandwidthRule::MedianHeuristic,
        };
        let s = cfg.resolve(&aug).unwrap();
        assert!(s > 0.0);
        // degenerate data has zero median distance
        let degenerate = aug_from(
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        );
        assert!(cfg.resolve(&degenerate).is_err());
    }

    #[test]
    fn core_term_zero_when_x_prime_equals_x() {
        let aug = aug_from(
            vec![1.0, -2.0, 0.5],
            vec![0.3, 0.1, -0.7],
            vec![1.1, 2.2, 3.3],
            vec![1.0, -2.0, 0.5],
        );
        let gram = build_gram(&aug, &KernelConfig::default()).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                if i != j {
                    assert_eq!(core_term(&gram, i, j).unwrap(), 0.0);
                }
            }
        }
    }

    #[test]
    fn core_term_matches_direct_kernel_calls() {
        let aug = random_aug(4, (1, 2, 1), 9);
        let cfg = KernelConfig::fixed(0.5);
        let gram = build_gram(&aug, &cfg).unwrap();
        let pts = aug.interleaved_points();
        for i in 0..4 {
            for j in 0..4 {
                if i == j {
                    continue;
                }
                let k = |a: usize, b: usize| gaussian_kernel(pts.row(a), pts.row(b), 0.5).unwrap();
                let expect = (k(2 * i, 2 * j) + k(2 * i + 1, 2 * j + 1))
                    - (k(2 * i, 2 * j + 1) + k(2 * i + 1, 2 * j));
                assert_eq!(core_term(&gram, i, j).unwrap(), expect);
            }
        }
    }

    #[test]
    fn core_term_rejects_bad_indices() {
        let aug = random_aug(3, (1, 1, 1), 3);
        let gram = build_gram(&aug, &KernelConfig::default()).unwrap();
        assert!(core_term(&gram, 1, 1).is_err());
        assert!(core_term(&gram, 0, 3).is_err());
    }

    #[test]
    fn build_count_increments() {
        let aug = random_aug(3, (1, 1, 1), 4);
        let before = gram_build_count();
        build_gram(&aug, &KernelConfig::default()).unwrap();
        assert!(gram_build_count() > before);
    }

    proptest! {
        #[test]
        fn kernel_symmetric_and_bounded(
            v in proptest::collection::vec(-5.0f64..5.0, 1..8),
            w in proptest::collection::vec(-5.0f64..5.0, 1..8),
            // keep sigma_sq * d2 / 2 well under ~745 so exp() cannot
            // underflow to zero; (0, 1] holds on that domain
            sigma_sq in 0.01f64..2.0,
        ) {
            let d = v.len().min(w.len());
            let (x, y) = (&v[..d], &w[..d]);
            let a = gaussian_kernel(x, y, sigma_sq).unwrap();
            let b = gaussian_kernel(y, x, sigma_sq).unwrap();
            prop_assert_eq!(a, b);
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn kernel_invariant_under_simultaneous_permutation(
            pairs in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..8),
            sigma_sq in 0.01f64..10.0,
            seed in 0u64..1000,
        ) {
            use rand::seq::SliceRandom;
            let x: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let mut idx: Vec<usize> = (0..x.len()).collect();
            idx.shuffle(&mut crate::rng::stream(seed));
            let xp: Vec<f64> = idx.iter().map(|&i| x[i]).collect();
            let yp: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            let a = gaussian_kernel(&x, &y, sigma_sq).unwrap();
            let b = gaussian_kernel(&xp, &yp, sigma_sq).unwrap();
            // same multiset of squared coordinate gaps, summed in a different
            // order: equal up to summation rounding
            prop_assert!((a - b).abs() <= 1e-12);
        }

        #[test]
        fn gram_symmetric_unit_diagonal(seed in 0u64..500, n in 2usize..7) {
            let aug = random_aug(n, (1, 1, 2), seed);
            let gram = build_gram(&aug, &KernelConfig::default()).unwrap();
            for a in 0..2 * n {
                prop_assert_eq!(gram.value_at(a, a), 1.0);
                for b in 0..2 * n {
                    prop_assert_eq!(gram.value_at(a, b), gram.value_at(b, a));
                    prop_assert!(gram.value_at(a, b) > 0.0 && gram.value_at(a, b) <= 1.0);
                }
            }
        }

        #[test]
        fn core_symmetric_and_bounded(seed in 0u64..500, n in 2usize..7) {
            let aug = random_aug(n, (2, 1, 1), seed);
            let gram = build_gram(&aug, &KernelConfig::default()).unwrap();
            for i in 0..n {
                for j in 0..n {
                    if i == j { continue; }
                    let gij = core_term(&gram, i, j).unwrap();
                    let gji = core_term(&gram, j, i).unwrap();
                    prop_assert_eq!(gij, gji);
                    prop_assert!(gij.abs() <= 2.0);
                }
            }
        }

        #[test]
        fn swapping_roles_negates_core(seed in 0u64..500, n in 2usize..7) {
            // exchanging V_i and V_i' flips the sign of the core for all j
            let aug = random_aug(n, (1, 1, 1), seed);
            let cfg = KernelConfig::default();
            let gram = build_gram(&aug, &cfg).unwrap();
            for i in 0..n {
                let mut bits = vec![true; n];
                bits[i] = false;
                let swapped = aug.flipped(&crate::calibration::FlipVector::new(bits)).unwrap();
                let gram_sw = build_gram(&swapped, &cfg).unwrap();
                for j in 0..n {
                    if i == j { continue; }
                    let a = core_term(&gram, i, j).unwrap();
                    let b = core_term(&gram_sw, i, j).unwrap();
                    prop_assert!((a + b).abs() < 1e-15);
                }
            }
        }
    }
}
