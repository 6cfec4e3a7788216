//! Check (pinball) loss, the ReLU crossing penalty, and the penalized two-quantile
//! objective with its subgradient with respect to the network outputs.
//!
//! Objectives use the mean convention: both the pinball terms and the penalty
//! are divided by the batch size.

use ndarray::{Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A pair of quantile levels `0 < tau1 < tau2 < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLevels")]
pub struct QuantileLevels {
    tau1: f64,
    tau2: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLevels {
    tau1: f64,
    tau2: f64,
}

impl TryFrom<RawLevels> for QuantileLevels {
    type Error = Error;
    fn try_from(raw: RawLevels) -> Result<Self> {
        QuantileLevels::new(raw.tau1, raw.tau2)
    }
}

impl QuantileLevels {
    pub fn new(tau1: f64, tau2: f64) -> Result<Self> {
        if !(0.0 < tau1 && tau1 < tau2 && tau2 < 1.0) {
            return Err(Error::invalid(format!(
                "quantile levels must satisfy 0 < tau1 < tau2 < 1, got ({tau1}, {tau2})"
            )));
        }
        Ok(QuantileLevels { tau1, tau2 })
    }

    /// Symmetric levels `(alpha/2, 1 - alpha/2)` for a `1 - alpha` band.
    pub fn symmetric(alpha: f64) -> Result<Self> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Self::new(alpha / 2.0, 1.0 - alpha / 2.0)
    }

    pub fn tau1(&self) -> f64 {
        self.tau1
    }

    pub fn tau2(&self) -> f64 {
        self.tau2
    }
}

/// Non-negative crossing penalty weight.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct PenaltyWeight(f64);

impl PenaltyWeight {
    pub const ZERO: PenaltyWeight = PenaltyWeight(0.0);

    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::invalid(format!("penalty weight must be finite and >= 0, got {lambda}")));
        }
        Ok(PenaltyWeight(lambda))
    }

    /// `ln n`, the default weight for a training set of size `n`.
    pub fn log_n(n: usize) -> Self {
        PenaltyWeight((n.max(1) as f64).ln())
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PenaltyWeight {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        PenaltyWeight::new(v)
    }
}

impl From<PenaltyWeight> for f64 {
    fn from(p: PenaltyWeight) -> f64 {
        p.0
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if 0.0 < tau && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("quantile level must lie in (0, 1), got {tau}")))
    }
}

#[inline]
fn rho<T: Real>(u: T, tau: T) -> T {
    if u > T::zero() {
        tau * u
    } else {
        (tau - T::one()) * u
    }
}

#[inline]
fn rho_grad<T: Real>(u: T, tau: T) -> T {
    if u > T::zero() {
        tau
    } else {
        tau - T::one()
    }
}

/// `ρ_τ(u) = u (τ - 1{u ≤ 0})`.
pub fn check_loss<T: Real>(u: T, tau: f64) -> Result<T> {
    check_tau(tau)?;
    Ok(rho(u, T::of(tau)))
}

/// Subgradient of [`check_loss`] in `u`; at `u = 0` this is `τ - 1`.
pub fn check_subgrad<T: Real>(u: T, tau: f64) -> Result<T> {
    check_tau(tau)?;
    Ok(rho_grad(u, T::of(tau)))
}

/// `max(f1 - f2, 0)`.
pub fn relu_penalty<T: Real>(f1: T, f2: T) -> T {
    (f1 - f2).max(T::zero())
}

/// Mean pinball loss of a single quantile level.
pub fn mean_check_loss<T: Real>(residuals: ArrayView1<'_, T>, tau: f64) -> Result<T> {
    check_tau(tau)?;
    if residuals.is_empty() {
        return Err(Error::invalid("mean check loss of an empty sample"));
    }
    let tau = T::of(tau);
    let total: T = residuals.iter().map(|&u| rho(u, tau)).sum();
    Ok(total / T::of(residuals.len() as f64))
}

fn check_shapes<T: Real>(preds: &ArrayView2<'_, T>, y: &ArrayView1<'_, T>) -> Result<()> {
    if preds.ncols() != 2 || preds.nrows() != y.len() {
        return Err(Error::shape(format!(
            "predictions are {:?} but there are {} responses",
            preds.dim(),
            y.len()
        )));
    }
    Ok(())
}

/// Penalized objective
/// `(1/n) Σ [ρ_τ1(y - f1) + ρ_τ2(y - f2)] + (λ/n) Σ max(f1 - f2, 0)`.
pub fn penalized_objective<T: Real>(
    preds: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    levels: QuantileLevels,
    lambda: PenaltyWeight,
) -> Result<T> {
    check_shapes(&preds, &y)?;
    let n = y.len();
    if n == 0 {
        return Err(Error::invalid("objective of an empty batch"));
    }
    let (t1, t2) = (T::of(levels.tau1), T::of(levels.tau2));
    let mut fit = T::zero();
    let mut crossing = T::zero();
    Zip::from(preds.rows()).and(y).for_each(|p, &yi| {
        fit += rho(yi - p[0], t1) + rho(yi - p[1], t2);
        crossing += relu_penalty(p[0], p[1]);
    });
    let n = T::of(n as f64);
    // Adding an exact zero keeps non-crossing objectives bitwise independent of λ.
    Ok(fit / n + T::of(lambda.value()) * crossing / n)
}

/// Per-sample subgradient of [`penalized_objective`] with respect to `(f1ᵢ, f2ᵢ)`.
///
/// The penalty contributes nothing at a tie `f1 = f2`.
pub fn objective_output_grads<T: Real>(
    preds: ArrayView2<'_, T>,
    y: ArrayView1<'_, T>,
    levels: QuantileLevels,
    lambda: PenaltyWeight,
) -> Result<Array2<T>> {
    check_shapes(&preds, &y)?;
    let mut grads = Array2::zeros((y.len(), 2));
    if y.is_empty() {
        return Ok(grads);
    }
    let inv_n = T::one() / T::of(y.len() as f64);
    let (t1, t2) = (T::of(levels.tau1), T::of(levels.tau2));
    let pen = T::of(lambda.value()) * inv_n;
    Zip::from(grads.rows_mut())
        .and(preds.rows())
        .and(y)
        .for_each(|mut g, p, &yi| {
            let cross = if p[0] > p[1] { pen } else { T::zero() };
            g[0] = -rho_grad(yi - p[0], t1) * inv_n + cross;
            g[1] = -rho_grad(yi - p[1], t2) * inv_n - cross;
        });
    Ok(grads)
}
