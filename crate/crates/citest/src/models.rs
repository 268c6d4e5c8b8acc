//! Conditional samplers for the model-X assumption: draw X' ~ X|Z.

use rand::Rng;
use rand::RngCore;
use rand_distr::{Cauchy, Distribution, StandardNormal, StudentT};

use crate::dataset::Matrix;
use crate::error::{Error, Result};

/// A known conditional law of X given Z. Implementations are immutable and
/// shareable; callers own their random streams.
pub trait ConditionalModel: Send + Sync {
    fn d_x(&self) -> usize;
    fn d_z(&self) -> usize;

    /// Writes one draw from X|Z=z into `out` (length d_x).
    fn sample_into(&self, z: &[f64], out: &mut [f64], rng: &mut dyn RngCore) -> Result<()>;

    /// Human-readable identification of the sampler.
    fn descriptor(&self) -> String;

    fn sample_given(&self, z: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.d_x()];
        self.sample_into(z, &mut out, rng)?;
        Ok(out)
    }
}

fn check_z(expected: usize, z: &[f64]) -> Result<()> {
    if z.len() != expected {
        return Err(Error::dims(format!(
            "conditioning vector has length {}, model expects d_z = {expected}",
            z.len()
        )));
    }
    Ok(())
}

/// X|Z=z ~ N(intercept + coeff z, noise_cov).
pub struct GaussianLinearModel {
    intercept: Vec<f64>,
    coeff: Matrix,
    chol: Matrix, // lower-triangular factor of noise_cov
}

/// Builds a Gaussian linear conditional model. `coeff` is d_x x d_z and
/// `noise_cov` must be symmetric positive definite.
pub fn gaussian_linear_model(
    intercept: Vec<f64>,
    coeff: Matrix,
    noise_cov: Matrix,
) -> Result<GaussianLinearModel> {
    let d_x = intercept.len();
    if coeff.rows() != d_x {
        return Err(Error::dims(format!(
            "coeff has {} rows, intercept has length {d_x}",
            coeff.rows()
        )));
    }
    if noise_cov.rows() != d_x || noise_cov.cols() != d_x {
        return Err(Error::dims(format!(
            "noise_cov is {}x{}, expected {d_x}x{d_x}",
            noise_cov.rows(),
            noise_cov.cols()
        )));
    }
    for i in 0..d_x {
        for j in 0..i {
            if (noise_cov.get(i, j) - noise_cov.get(j, i)).abs() > 1e-12 {
                return Err(Error::invalid("noise covariance is not symmetric"));
            }
        }
    }
    let chol = cholesky(&noise_cov)
        .ok_or_else(|| Error::invalid("noise covariance is not positive definite"))?;
    Ok(GaussianLinearModel {
        intercept,
        coeff,
        chol,
    })
}

fn cholesky(m: &Matrix) -> Option<Matrix> {
    let n = m.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m.get(i, j);
            for k in 0..j {
                sum -= l.get(i, k) * l.get(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l.row_mut(i)[j] = sum.sqrt();
            } else {
                l.row_mut(i)[j] = sum / l.get(j, j);
            }
        }
    }
    Some(l)
}

impl ConditionalModel for GaussianLinearModel {
    fn d_x(&self) -> usize {
        self.intercept.len()
    }

    fn d_z(&self) -> usize {
        self.coeff.cols()
    }

    fn sample_into(&self, z: &[f64], out: &mut [f64], rng: &mut dyn RngCore) -> Result<()> {
        check_z(self.d_z(), z)?;
        let d_x = self.d_x();
        let eps: Vec<f64> = (0..d_x).map(|_| rng.sample(StandardNormal)).collect();
        for (i, slot) in out.iter_mut().enumerate() {
            let mut v = self.intercept[i];
            for (j, zj) in z.iter().enumerate() {
                v += self.coeff.get(i, j) * zj;
            }
            for (k, e) in eps.iter().enumerate().take(i + 1) {
                v += self.chol.get(i, k) * e;
            }
            *slot = v;
        }
        Ok(())
    }

    fn descriptor(&self) -> String {
        format!("gaussian-linear(d_x={}, d_z={})", self.d_x(), self.d_z())
    }
}

/// Additive noise family used by the built-in scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Gaussian {
        sd: f64,
    },
    StudentT {
        df: f64,
    },
    Cauchy,
    /// Equal mixture of two centered normals with the given sds.
    GaussianMixture {
        sd_a: f64,
        sd_b: f64,
    },
}

impl NoiseKind {
    pub fn sample(&self, rng: &mut dyn RngCore) -> f64 {
        match *self {
            NoiseKind::Gaussian { sd } => {
                let u: f64 = rng.sample(StandardNormal);
                sd * u
            }
            NoiseKind::StudentT { df } => StudentT::new(df).unwrap().sample(rng),
            NoiseKind::Cauchy => Cauchy::new(0.0, 1.0).unwrap().sample(rng),
            NoiseKind::GaussianMixture { sd_a, sd_b } => {
                let sd = if rng.gen::<bool>() { sd_a } else { sd_b };
                let u: f64 = rng.sample(StandardNormal);
                sd * u
            }
        }
    }

    fn label(&self) -> String {
        match *self {
            NoiseKind::Gaussian { sd } => format!("N(0, {})", sd * sd),
            NoiseKind::StudentT { df } => format!("t({df})"),
            NoiseKind::Cauchy => "Cauchy(0, 1)".into(),
            NoiseKind::GaussianMixture { sd_a, sd_b } => {
                format!("0.5 N(0, {}) + 0.5 N(0, {})", sd_a * sd_a, sd_b * sd_b)
            }
        }
    }
}

/// Conditional mean map applied to z before adding noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionalMean {
    /// m(z) = z[0] (univariate confounder).
    FirstCoordinate,
    /// m(z) = sum_i |z_i| / sqrt(sum_i z_i^2), the high-dimensional link.
    AbsSumOverNorm,
}

impl ConditionalMean {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            ConditionalMean::FirstCoordinate => z[0],
            ConditionalMean::AbsSumOverNorm => normalized_abs_sum(z),
        }
    }
}

pub(crate) fn normalized_abs_sum(u: &[f64]) -> f64 {
    let norm2: f64 = u.iter().map(|v| v * v).sum();
    if norm2 > 0.0 {
        u.iter().map(|v| v.abs()).sum::<f64>() / norm2.sqrt()
    } else {
        0.0
    }
}

/// Univariate X given by X = m(Z) + noise.
pub struct ShiftNoiseModel {
    d_z: usize,
    mean: ConditionalMean,
    noise: NoiseKind,
}

impl ShiftNoiseModel {
    pub fn new(d_z: usize, mean: ConditionalMean, noise: NoiseKind) -> Self {
        ShiftNoiseModel { d_z, mean, noise }
    }
}

impl ConditionalModel for ShiftNoiseModel {
    fn d_x(&self) -> usize {
        1
    }

    fn d_z(&self) -> usize {
        self.d_z
    }

    fn sample_into(&self, z: &[f64], out: &mut [f64], rng: &mut dyn RngCore) -> Result<()> {
        check_z(self.d_z, z)?;
        out[0] = self.mean.eval(z) + self.noise.sample(rng);
        Ok(())
    }

    fn descriptor(&self) -> String {
        let mean = match self.mean {
            ConditionalMean::FirstCoordinate => "z".to_string(),
            ConditionalMean::AbsSumOverNorm => "abs-sum(z)/norm(z)".to_string(),
        };
        format!("{mean} + {}", self.noise.label())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn moments(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn gaussian_linear_matches_stated_conditional() {
        // X|Z ~ N(z, 1 - rho^2) with rho = 0.8 at z = 0
        let m = gaussian_linear_model(
            vec![0.0],
            Matrix::new(1, 1, vec![1.0]).unwrap(),
            Matrix::new(1, 1, vec![0.36]).unwrap(),
        )
        .unwrap();
        let mut rng = stream(101);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| m.sample_given(&[0.0], &mut rng).unwrap()[0])
            .collect();
        let (mean, var) = moments(&draws);
        // 3-sigma MC tolerance: se(mean) = 0.6/sqrt(1e5), se(var) ~ sqrt(2/n)*var
        assert!(mean.abs() < 3.0 * 0.6 / (1e5f64).sqrt(), "mean = {mean}");
        assert!(
            (var - 0.36).abs() < 3.0 * 0.36 * (2.0 / 1e5f64).sqrt(),
            "var = {var}"
        );
    }

    #[test]
    fn zero_coefficients_ignore_z() {
        let m = gaussian_linear_model(
            vec![2.5, -1.0],
            Matrix::zeros(2, 3),
            Matrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let mut rng = stream(7);
        let mut sums = [0.0; 2];
        let reps = 100_000;
        for i in 0..reps {
            let z = [i as f64, -(i as f64), 0.5 * i as f64];
            let s = m.sample_given(&z, &mut rng).unwrap();
            sums[0] += s[0];
            sums[1] += s[1];
        }
        let se = 1.0 / (reps as f64).sqrt();
        assert!((sums[0] / reps as f64 - 2.5).abs() < 4.0 * se);
        assert!((sums[1] / reps as f64 + 1.0).abs() < 4.0 * se);
    }

    #[test]
    fn conditional_mean_matches_linear_map() {
        // 2x3 coefficient matrix: empirical conditional mean ~ intercept + coeff z
        let coeff = Matrix::new(2, 3, vec![0.5, -1.0, 2.0, 1.5, 0.25, -0.75]).unwrap();
        let cov = Matrix::new(2, 2, vec![1.0, 0.3, 0.3, 0.5]).unwrap();
        let m = gaussian_linear_model(vec![1.0, -2.0], coeff, cov).unwrap();
        let z = [0.4, -1.2, 0.9];
        let expect = [
            1.0 + 0.5 * z[0] - 1.0 * z[1] + 2.0 * z[2],
            -2.0 + 1.5 * z[0] + 0.25 * z[1] - 0.75 * z[2],
        ];
        let mut rng = stream(55);
        let reps = 100_000;
        let mut sums = [0.0; 2];
        for _ in 0..reps {
            let s = m.sample_given(&z, &mut rng).unwrap();
            sums[0] += s[0];
            sums[1] += s[1];
        }
        for k in 0..2 {
            let got = sums[k] / reps as f64;
            let sd = [1.0f64, 0.5f64][k].sqrt();
            assert!(
                (got - expect[k]).abs() < 4.0 * sd / (reps as f64).sqrt(),
                "component {k}: {got} vs {}",
                expect[k]
            );
        }
    }

    #[test]
    fn covariance_structure_respected() {
        let cov = Matrix::new(2, 2, vec![2.0, 0.8, 0.8, 1.0]).unwrap();
        let m = gaussian_linear_model(vec![0.0, 0.0], Matrix::zeros(2, 1), cov).unwrap();
        let mut rng = stream(13);
        let reps = 200_000;
        let (mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0);
        for _ in 0..reps {
            let s = m.sample_given(&[0.0], &mut rng).unwrap();
            s00 += s[0] * s[0];
            s01 += s[0] * s[1];
            s11 += s[1] * s[1];
        }
        let nf = reps as f64;
        assert!((s00 / nf - 2.0).abs() < 0.05);
        assert!((s01 / nf - 0.8).abs() < 0.05);
        assert!((s11 / nf - 1.0).abs() < 0.05);
    }

    #[test]
    fn rejects_non_spd_covariance() {
        let bad = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap(); // eigenvalues 3, -1
        assert!(gaussian_linear_model(vec![0.0, 0.0], Matrix::zeros(2, 1), bad).is_err());
        let asym = Matrix::new(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(gaussian_linear_model(vec![0.0, 0.0], Matrix::zeros(2, 1), asym).is_err());
    }

    #[test]
    fn rejects_wrong_z_length() {
        let m = gaussian_linear_model(
            vec![0.0],
            Matrix::new(1, 2, vec![1.0, 1.0]).unwrap(),
            Matrix::new(1, 1, vec![1.0]).unwrap(),
        )
        .unwrap();
        let mut rng = stream(1);
        assert!(m.sample_given(&[0.0], &mut rng).is_err());
    }

    #[test]
    fn mixture_noise_moments() {
        // equal mixture of N(0,1) and N(0,10): variance 5.5
        let noise = NoiseKind::GaussianMixture {
            sd_a: 1.0,
            sd_b: 10.0f64.sqrt(),
        };
        let mut rng = stream(21);
        let draws: Vec<f64> = (0..200_000).map(|_| noise.sample(&mut rng)).collect();
        let (mean, var) = moments(&draws);
        assert!(mean.abs() < 0.03, "mean = {mean}");
        assert!((var - 5.5).abs() < 0.15, "var = {var}");
    }

    #[test]
    fn normalized_abs_sum_edge_cases() {
        assert_eq!(normalized_abs_sum(&[0.0, 0.0]), 0.0);
        assert!((normalized_abs_sum(&[3.0, -4.0]) - 7.0 / 5.0).abs() < 1e-15);
        assert_eq!(normalized_abs_sum(&[2.0]), 1.0);
    }
}
