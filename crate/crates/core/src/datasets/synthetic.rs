//! Synthetic regression benchmarks with analytic conditional quantiles.
//!
//! Every model has the form `Y = center(X, v) + σ(X)·Z` with `X ~ U[0,1]^d`,
//! `Z ~ N(0,1)` and, for the double-sine model only, a fair coin `v` choosing
//! between two mirrored sine branches.
//!
//! Random draws come from `SplitMix64` seeded with `SyntheticSpec::seed`. Each sample
//! consumes, in order: `d` uniforms for `X`, one uniform for `v` (double-sine
//! only), then one standard normal for `Z`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::normal::{normal_cdf, normal_inv_cdf};
use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Index coefficients of the single-index model; dimension `d` uses the first `d`.
#[allow(clippy::approx_constant)]
pub const SINGLE_INDEX_THETA: [f64; 25] = [
    0.29, 0.15, -0.34, -0.62, -1.56, -1.51, -0.94, 0.01, 0.08, 1.02, 1.95, -2.35, 2.44, 0.35, -0.01,
    -1.09, -0.49, 2.11, 1.44, -0.51, -0.33, 3.14, 0.95, 0.39, -0.16,
];

/// Floor on the single-index model's conditional variance.
pub const SINGLE_INDEX_MIN_VARIANCE: f64 = 1e-6;

const MIXTURE_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticModel {
    /// `2 sin(4πx) + ε`
    Sine,
    /// `10x + 5ε·1{x > .5} + ε·1{x ≤ .5}`
    TwoPhase,
    /// `4 - 3|x - .5| + ε`
    Triangle,
    /// `5x·1{x ≤ .5} + 5(x - 1)·1{x > .5} + ε`
    Discontinuous,
    /// `±5 sin(2πx) + ε`, sign chosen by a fair coin per sample
    DoubleSine,
    /// `exp(θᵀx) + ε`, `ε | x ~ N(0, sin(πx₁))`
    SingleIndex,
}

impl SyntheticModel {
    pub const ALL: [SyntheticModel; 6] = [
        SyntheticModel::Sine,
        SyntheticModel::TwoPhase,
        SyntheticModel::Triangle,
        SyntheticModel::Discontinuous,
        SyntheticModel::DoubleSine,
        SyntheticModel::SingleIndex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SyntheticModel::Sine => "sine",
            SyntheticModel::TwoPhase => "two-phase",
            SyntheticModel::Triangle => "triangle",
            SyntheticModel::Discontinuous => "discontinuous",
            SyntheticModel::DoubleSine => "double-sine",
            SyntheticModel::SingleIndex => "single-index",
        }
    }

    /// Error laws the model accepts. Double-sine and single-index fix their own
    /// sine-shaped variance.
    pub fn allows(self, error: ErrorLaw) -> bool {
        match self {
            SyntheticModel::DoubleSine | SyntheticModel::SingleIndex => error == ErrorLaw::Sin,
            _ => true,
        }
    }
}

impl fmt::Display for SyntheticModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SyntheticModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SyntheticModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown synthetic model '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorLaw {
    /// `N(0, 1)`
    Normal,
    /// `N(0, exp((x - .5)²))`
    Exp,
    /// `N(0, sin(πx) / 4)`
    Sin,
}

impl ErrorLaw {
    pub const ALL: [ErrorLaw; 3] = [ErrorLaw::Normal, ErrorLaw::Exp, ErrorLaw::Sin];

    pub fn name(self) -> &'static str {
        match self {
            ErrorLaw::Normal => "normal",
            ErrorLaw::Exp => "exp",
            ErrorLaw::Sin => "sin",
        }
    }

    fn sd(self, x: f64) -> f64 {
        match self {
            ErrorLaw::Normal => 1.0,
            ErrorLaw::Exp => (0.5 * (x - 0.5).powi(2)).exp(),
            ErrorLaw::Sin => 0.5 * (PI * x).sin().max(0.0).sqrt(),
        }
    }
}

impl fmt::Display for ErrorLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ErrorLaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ErrorLaw::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown error law '{s}'")))
    }
}

/// A fully determined synthetic data source.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct SyntheticSpec {
    pub model: SyntheticModel,
    pub error: ErrorLaw,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    model: SyntheticModel,
    #[serde(default)]
    error: Option<ErrorLaw>,
    n: usize,
    #[serde(default)]
    d: Option<usize>,
    #[serde(default)]
    seed: u64,
}

impl TryFrom<RawSpec> for SyntheticSpec {
    type Error = Error;
    fn try_from(raw: RawSpec) -> Result<Self> {
        let error = raw.error.unwrap_or(match raw.model {
            SyntheticModel::DoubleSine | SyntheticModel::SingleIndex => ErrorLaw::Sin,
            _ => ErrorLaw::Normal,
        });
        SyntheticSpec::new(raw.model, error, raw.n, raw.d.unwrap_or(1), raw.seed)
    }
}

/// One latent draw: covariates, mixture branch, and standardized noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Draw {
    pub x: Vec<f64>,
    pub upper_branch: bool,
    pub z: f64,
}

impl SyntheticSpec {
    pub fn new(model: SyntheticModel, error: ErrorLaw, n: usize, d: usize, seed: u64) -> Result<Self> {
        let spec = SyntheticSpec {
            model,
            error,
            n,
            d,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::invalid("synthetic sample size must be at least 1"));
        }
        match self.model {
            SyntheticModel::SingleIndex => {
                if !(1..=SINGLE_INDEX_THETA.len()).contains(&self.d) {
                    return Err(Error::invalid(format!(
                        "single-index model needs 1 <= d <= {}, got {}",
                        SINGLE_INDEX_THETA.len(),
                        self.d
                    )));
                }
            }
            _ if self.d != 1 => {
                return Err(Error::invalid(format!(
                    "model '{}' is univariate, got d = {}",
                    self.model, self.d
                )))
            }
            _ => {}
        }
        if !self.model.allows(self.error) {
            return Err(Error::invalid(format!(
                "model '{}' does not accept error law '{}'",
                self.model, self.error
            )));
        }
        Ok(())
    }

    pub fn with_n(self, n: usize) -> Self {
        SyntheticSpec { n, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SyntheticSpec { seed, ..self }
    }

    /// Conditional location given the branch (`upper_branch` only matters for
    /// the double-sine model).
    pub fn center(&self, x: &[f64], upper_branch: bool) -> f64 {
        let x1 = x[0];
        match self.model {
            SyntheticModel::Sine => 2.0 * (4.0 * PI * x1).sin(),
            SyntheticModel::TwoPhase => 10.0 * x1,
            SyntheticModel::Triangle => 4.0 - 3.0 * (x1 - 0.5).abs(),
            SyntheticModel::Discontinuous => {
                if x1 <= 0.5 {
                    5.0 * x1
                } else {
                    5.0 * (x1 - 1.0)
                }
            }
            SyntheticModel::DoubleSine => {
                let s = 5.0 * (2.0 * PI * x1).sin();
                if upper_branch {
                    s
                } else {
                    -s
                }
            }
            SyntheticModel::SingleIndex => {
                let index: f64 = x.iter().zip(SINGLE_INDEX_THETA).map(|(a, b)| a * b).sum();
                index.exp()
            }
        }
    }

    /// Conditional noise standard deviation `σ(x)`.
    pub fn noise_sd(&self, x: &[f64]) -> f64 {
        let x1 = x[0];
        match self.model {
            SyntheticModel::TwoPhase => {
                let scale = if x1 > 0.5 { 5.0 } else { 1.0 };
                scale * self.error.sd(x1)
            }
            SyntheticModel::SingleIndex => (PI * x1).sin().max(SINGLE_INDEX_MIN_VARIANCE).sqrt(),
            _ => self.error.sd(x1),
        }
    }

    pub fn response(&self, draw: &Draw) -> f64 {
        self.center(&draw.x, draw.upper_branch) + self.noise_sd(&draw.x) * draw.z
    }

    /// The latent draws behind [`generate`](Self::generate), in sample order.
    pub fn draws(&self) -> Vec<Draw> {
        let mut rng = SplitMix64::seed_from_u64(self.seed);
        (0..self.n)
            .map(|_| {
                let x: Vec<f64> = (0..self.d).map(|_| rng.random::<f64>()).collect();
                let upper_branch = self.model == SyntheticModel::DoubleSine && rng.random_bool(0.5);
                let z: f64 = rng.sample(StandardNormal);
                Draw { x, upper_branch, z }
            })
            .collect()
    }

    pub fn generate<T: Real>(&self) -> Result<Dataset<T>> {
        self.validate()?;
        let draws = self.draws();
        let x = Array2::from_shape_fn((self.n, self.d), |(i, j)| T::of(draws[i].x[j]));
        let y = Array1::from_iter(draws.iter().map(|d| T::of(self.response(d))));
        let names = (1..=self.d).map(|j| format!("x{j}")).collect();
        Dataset::new(x, y, Some(names))
    }

    /// True conditional `tau`-quantile of `Y` given `X = x`.
    pub fn oracle_quantile(&self, x: &[f64], tau: f64) -> Result<f64> {
        if x.len() != self.d {
            return Err(Error::shape(format!("oracle expects {} covariates, got {}", self.d, x.len())));
        }
        let z = normal_inv_cdf(tau)?;
        if self.model != SyntheticModel::DoubleSine {
            return Ok(self.center(x, true) + self.noise_sd(x) * z);
        }
        Ok(mixture_quantile(self.center(x, true).abs(), self.noise_sd(x), tau))
    }

    /// `E[σ²(X)]` under `X ~ U[0,1]^d` by the midpoint rule on the first
    /// coordinate (σ depends on no other).
    pub fn mean_noise_variance(&self, nodes: usize) -> f64 {
        let mut x = vec![0.5; self.d];
        let h = 1.0 / nodes as f64;
        (0..nodes)
            .map(|i| {
                x[0] = (i as f64 + 0.5) * h;
                self.noise_sd(&x).powi(2)
            })
            .sum::<f64>()
            * h
    }
}

/// Quantile of the equal mixture `½N(c, σ²) + ½N(-c, σ²)`, `c ≥ 0`, by bisection.
fn mixture_quantile(c: f64, sd: f64, tau: f64) -> f64 {
    if sd == 0.0 {
        return match tau.partial_cmp(&0.5) {
            Some(std::cmp::Ordering::Less) => -c,
            Some(std::cmp::Ordering::Greater) => c,
            _ => 0.0,
        };
    }
    // Symmetric about 0: solve in the lower half, where erfc keeps relative
    // accuracy deep between well-separated modes.
    if tau == 0.5 {
        return 0.0;
    }
    if tau > 0.5 {
        return -mixture_quantile(c, sd, 1.0 - tau);
    }
    let cdf = |y: f64| 0.5 * normal_cdf((y - c) / sd) + 0.5 * normal_cdf((y + c) / sd);
    let reach = c + 40.0 * sd;
    let (mut lo, mut hi) = (-reach, 0.0);
    while hi - lo > MIXTURE_TOL {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < tau {
            lo = mid;
        } else {
            hi = mid;
        }
        if mid == lo && mid == hi {
            break;
        }
    }
    0.5 * (lo + hi)
}
