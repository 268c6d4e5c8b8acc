//! Synthetic data generators for the power studies, together with the true
//! conditional model of each scenario and its ground-truth label.

use rand::Rng;
use rand::RngCore;
use rand_distr::StandardNormal;

use crate::dataset::{Dataset, Matrix};
use crate::error::{Error, Result};
use crate::models::{
    normalized_abs_sum, ConditionalMean, ConditionalModel, NoiseKind, ShiftNoiseModel,
};

/// Whether the scenario parameters put it under the null or the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Truth {
    Null,
    Alternative,
}

impl Truth {
    pub fn is_null(&self) -> bool {
        matches!(self, Truth::Null)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    Ex1a,
    Ex1b,
    Ex1c,
    Ex2a,
    Ex2b,
    Ex3a,
    Ex3b,
    Ex4a,
    Ex4b,
    Pitman,
}

impl ScenarioName {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::Ex1a => "ex1a",
            ScenarioName::Ex1b => "ex1b",
            ScenarioName::Ex1c => "ex1c",
            ScenarioName::Ex2a => "ex2a",
            ScenarioName::Ex2b => "ex2b",
            ScenarioName::Ex3a => "ex3a",
            ScenarioName::Ex3b => "ex3b",
            ScenarioName::Ex4a => "ex4a",
            ScenarioName::Ex4b => "ex4b",
            ScenarioName::Pitman => "pitman",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ex1a" => Ok(ScenarioName::Ex1a),
            "ex1b" => Ok(ScenarioName::Ex1b),
            "ex1c" => Ok(ScenarioName::Ex1c),
            "ex2a" => Ok(ScenarioName::Ex2a),
            "ex2b" => Ok(ScenarioName::Ex2b),
            "ex3a" => Ok(ScenarioName::Ex3a),
            "ex3b" => Ok(ScenarioName::Ex3b),
            "ex4a" => Ok(ScenarioName::Ex4a),
            "ex4b" => Ok(ScenarioName::Ex4b),
            "pitman" => Ok(ScenarioName::Pitman),
            other => Err(Error::invalid(format!("unknown scenario {other:?}"))),
        }
    }
}

/// One grid point of a study: a named generator with its parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    name: ScenarioName,
    n: usize,
    r: f64,
    d: usize,
    beta: f64,
}

/// Scale of the wide component of the two-scale noise mixture. The scale
/// parameters of the mixture components act as standard deviations: the
/// wide component is N(0, 100). The reference power curves for the mixture
/// scenarios are reproduced only under this convention.
const MIX_SD_WIDE: f64 = 10.0;

/// Equal two-component noise mixture (eta_1, eta_2); each component draws
/// the pair independently with the given per-coordinate sds, so the
/// dependence between eta_1 and eta_2 is purely through the shared
/// component index.
#[derive(Clone, Copy)]
struct MixturePair {
    comp0: (f64, f64),
    comp1: (f64, f64),
}

impl MixturePair {
    fn for_variant(b_variant: bool) -> Self {
        if b_variant {
            // narrow/wide against wide/narrow: negatively associated scales
            MixturePair {
                comp0: (1.0, MIX_SD_WIDE),
                comp1: (MIX_SD_WIDE, 1.0),
            }
        } else {
            // both narrow or both wide: positively associated scales
            MixturePair {
                comp0: (1.0, 1.0),
                comp1: (MIX_SD_WIDE, MIX_SD_WIDE),
            }
        }
    }

    fn sample(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let (s1, s2) = if rng.gen::<bool>() {
            self.comp0
        } else {
            self.comp1
        };
        let u1: f64 = rng.sample(StandardNormal);
        let u2: f64 = rng.sample(StandardNormal);
        (s1 * u1, s2 * u2)
    }
}

impl Scenario {
    fn validated(self) -> Result<Self> {
        if self.n < 2 {
            return Err(Error::invalid(format!(
                "sample size n = {} is too small",
                self.n
            )));
        }
        if self.d < 1 {
            return Err(Error::invalid("confounder dimension d must be at least 1"));
        }
        if self.name == ScenarioName::Pitman {
            if self.beta < 0.0 {
                return Err(Error::invalid("beta must be non-negative"));
            }
            let w = self.beta / (self.n as f64).sqrt();
            if w > 1.0 {
                return Err(Error::invalid(format!(
                    "mixing weight beta/sqrt(n) = {w} exceeds 1"
                )));
            }
        }
        Ok(self)
    }

    fn base(name: ScenarioName, n: usize) -> Scenario {
        Scenario {
            name,
            n,
            r: 0.0,
            d: 1,
            beta: 0.0,
        }
    }

    pub fn ex1a(r: f64, n: usize) -> Result<Self> {
        Scenario {
            r,
            ..Self::base(ScenarioName::Ex1a, n)
        }
        .validated()
    }

    pub fn ex1b(r: f64, n: usize) -> Result<Self> {
        Scenario {
            r,
            ..Self::base(ScenarioName::Ex1b, n)
        }
        .validated()
    }

    pub fn ex1c(r: f64, n: usize) -> Result<Self> {
        Scenario {
            r,
            ..Self::base(ScenarioName::Ex1c, n)
        }
        .validated()
    }

    pub fn ex2a(n: usize) -> Result<Self> {
        Self::base(ScenarioName::Ex2a, n).validated()
    }

    pub fn ex2b(n: usize) -> Result<Self> {
        Self::base(ScenarioName::Ex2b, n).validated()
    }

    pub fn ex3a(d: usize, n: usize) -> Result<Self> {
        Scenario {
            d,
            ..Self::base(ScenarioName::Ex3a, n)
        }
        .validated()
    }

    pub fn ex3b(d: usize, n: usize) -> Result<Self> {
        Scenario {
            d,
            ..Self::base(ScenarioName::Ex3b, n)
        }
        .validated()
    }

    /// Auto-sized: n = d^2 + 20.
    pub fn ex4a(d: usize) -> Result<Self> {
        Scenario {
            d,
            ..Self::base(ScenarioName::Ex4a, d * d + 20)
        }
        .validated()
    }

    /// Auto-sized: n = d^2 + 20.
    pub fn ex4b(d: usize) -> Result<Self> {
        Scenario {
            d,
            ..Self::base(ScenarioName::Ex4b, d * d + 20)
        }
        .validated()
    }

    pub fn pitman(beta: f64, n: usize) -> Result<Self> {
        Scenario {
            beta,
            ..Self::base(ScenarioName::Pitman, n)
        }
        .validated()
    }

    pub fn name(&self) -> ScenarioName {
        self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d_z(&self) -> usize {
        self.d
    }

    /// The scanned parameter, if the scenario has one (r for Ex1, beta for
    /// the Pitman mixture).
    pub fn param(&self) -> Option<f64> {
        match self.name {
            ScenarioName::Ex1a | ScenarioName::Ex1b | ScenarioName::Ex1c => Some(self.r),
            ScenarioName::Pitman => Some(self.beta),
            _ => None,
        }
    }

    pub fn truth(&self) -> Truth {
        match self.name {
            ScenarioName::Ex1a | ScenarioName::Ex1b | ScenarioName::Ex1c => {
                if self.r == 0.0 {
                    Truth::Null
                } else {
                    Truth::Alternative
                }
            }
            ScenarioName::Pitman => {
                if self.beta == 0.0 {
                    Truth::Null
                } else {
                    Truth::Alternative
                }
            }
            _ => Truth::Alternative,
        }
    }

    fn ex1_noise(&self) -> NoiseKind {
        match self.name {
            ScenarioName::Ex1a => NoiseKind::Gaussian { sd: 1.0 },
            ScenarioName::Ex1b => NoiseKind::StudentT { df: 4.0 },
            ScenarioName::Ex1c => NoiseKind::Cauchy,
            _ => unreachable!(),
        }
    }

    fn is_b_variant(&self) -> bool {
        matches!(
            self.name,
            ScenarioName::Ex2b | ScenarioName::Ex3b | ScenarioName::Ex4b
        )
    }

    /// The true conditional law of X given Z for this scenario.
    ///
    /// For the mixture scenarios only the marginal law of eta_1 matters,
    /// an equal mixture of the narrow and wide components; both the (a)
    /// and (b) variants share it.
    pub fn conditional_model(&self) -> Box<dyn ConditionalModel> {
        let mixture = NoiseKind::GaussianMixture {
            sd_a: 1.0,
            sd_b: MIX_SD_WIDE,
        };
        match self.name {
            ScenarioName::Ex1a | ScenarioName::Ex1b | ScenarioName::Ex1c => Box::new(
                ShiftNoiseModel::new(1, ConditionalMean::FirstCoordinate, self.ex1_noise()),
            ),
            ScenarioName::Ex2a | ScenarioName::Ex2b => Box::new(ShiftNoiseModel::new(
                1,
                ConditionalMean::FirstCoordinate,
                mixture,
            )),
            ScenarioName::Ex3a | ScenarioName::Ex3b | ScenarioName::Ex4a | ScenarioName::Ex4b => {
                Box::new(ShiftNoiseModel::new(
                    self.d,
                    ConditionalMean::AbsSumOverNorm,
                    mixture,
                ))
            }
            ScenarioName::Pitman => Box::new(ShiftNoiseModel::new(
                1,
                ConditionalMean::FirstCoordinate,
                NoiseKind::Gaussian { sd: 1.0 },
            )),
        }
    }

    /// Draws `rows` independent observations from the scenario's law.
    ///
    /// The row law is that of the full scenario (the Pitman mixing weight
    /// uses the scenario's own n), so callers can draw pairs for
    /// Monte-Carlo functionals of the population distribution.
    pub fn sample_rows(&self, rows: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
        let (data, _) = self.sample_rows_flagged(rows, rng)?;
        Ok(data)
    }

    /// As `sample_rows`, also reporting which rows came from the second
    /// mixture component (meaningful for the Pitman scenario only).
    pub(crate) fn sample_rows_flagged(
        &self,
        rows: usize,
        rng: &mut dyn RngCore,
    ) -> Result<(Dataset, Vec<bool>)> {
        let mut x = Vec::with_capacity(rows);
        let mut y = Vec::with_capacity(rows);
        let mut z = Vec::with_capacity(rows * self.d);
        let mut flags = vec![false; rows];

        match self.name {
            ScenarioName::Ex1a | ScenarioName::Ex1b | ScenarioName::Ex1c => {
                let noise = self.ex1_noise();
                for _ in 0..rows {
                    let zi = noise.sample(rng);
                    let xi = zi + noise.sample(rng);
                    let yi = self.r * xi + zi + noise.sample(rng);
                    z.push(zi);
                    x.push(xi);
                    y.push(yi);
                }
            }
            ScenarioName::Ex2a | ScenarioName::Ex2b => {
                let pair = MixturePair::for_variant(self.is_b_variant());
                for _ in 0..rows {
                    let zi: f64 = rng.gen();
                    let (e1, e2) = pair.sample(rng);
                    z.push(zi);
                    x.push(zi + e1);
                    y.push(zi + e2);
                }
            }
            ScenarioName::Ex3a | ScenarioName::Ex3b | ScenarioName::Ex4a | ScenarioName::Ex4b => {
                let pair = MixturePair::for_variant(self.is_b_variant());
                for _ in 0..rows {
                    let zi: Vec<f64> = (0..self.d).map(|_| rng.sample(StandardNormal)).collect();
                    let m = normalized_abs_sum(&zi);
                    let (e1, e2) = pair.sample(rng);
                    z.extend_from_slice(&zi);
                    x.push(m + e1);
                    y.push(m + e2);
                }
            }
            ScenarioName::Pitman => {
                let weight = self.beta / (self.n as f64).sqrt();
                for flag in flags.iter_mut() {
                    let zi: f64 = rng.sample(StandardNormal);
                    let e1: f64 = rng.sample(StandardNormal);
                    let e2: f64 = rng.sample(StandardNormal);
                    let xi = zi + e1;
                    let from_b = rng.gen::<f64>() < weight;
                    let yi = if from_b { zi + xi + e2 } else { zi + e2 };
                    *flag = from_b;
                    z.push(zi);
                    x.push(xi);
                    y.push(yi);
                }
            }
        }

        let data = Dataset::new(
            Matrix::new(rows, 1, x)?,
            Matrix::new(rows, 1, y)?,
            Matrix::new(rows, self.d, z)?,
        )?;
        Ok((data, flags))
    }

    /// Generates the scenario's n observations.
    pub fn generate(&self, rng: &mut dyn RngCore) -> Result<Dataset> {
        self.sample_rows(self.n, rng)
    }
}

/// Draws a dataset, its true conditional model, and the ground-truth label.
pub fn generate_scenario(
    s: &Scenario,
    rng: &mut dyn RngCore,
) -> Result<(Dataset, Box<dyn ConditionalModel>, Truth)> {
    let data = s.generate(rng)?;
    Ok((data, s.conditional_model(), s.truth()))
}

/// Local-alternative mixture: each row is drawn from
/// (a) X = Z + eta_1, Y = Z + eta_2 with probability 1 - beta/sqrt(n), and
/// (b) X = Z + eta_1, Y = Z + X + eta_2 otherwise; Z, eta_1, eta_2 iid N(0,1).
pub fn pitman_mixture(beta: f64, n: usize, rng: &mut dyn RngCore) -> Result<Dataset> {
    Scenario::pitman(beta, n)?.generate(rng)
}
