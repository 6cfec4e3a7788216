//! Fitting the quantile pair: penalized two-headed network (NC-CQR / CQR) and
//! the linear quantile regression baseline.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use super::{LinearQuantile, ModelKind, QuantileModel, ResponseScale};
use crate::datasets::{Dataset, Scaler};
use crate::error::{Error, Result};
use crate::losses::{mean_check_loss, objective_output_grads, penalized_objective, PenaltyWeight, QuantileLevels};
use crate::nn::{init_network, AdamConfig, AdamState, NetworkParams};
use crate::scalar::Real;

/// Mixed into the training seed to decorrelate batch shuffling from initialization.
const SHUFFLE_STREAM: u64 = 0x05ee_d0fb_a7c4;

fn default_hidden() -> Vec<usize> {
    vec![256, 256, 256]
}
fn default_epochs() -> usize {
    2000
}
fn default_patience() -> usize {
    50
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_full_batch_limit() -> usize {
    4000
}
fn default_minibatch() -> usize {
    256
}
fn default_true() -> bool {
    true
}
fn default_linear_steps() -> usize {
    4000
}
fn default_linear_lr() -> f64 {
    0.05
}

/// Training hyperparameters shared by the neural and linear fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Crossing penalty weight; `None` means `ln(n_train)`.
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Stop once the best objective improved by less than `tolerance`
    /// over the last `patience` epochs.
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    /// Explicit mini-batch size; `None` selects full batch up to
    /// `full_batch_limit` rows and `minibatch` rows beyond.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_full_batch_limit")]
    pub full_batch_limit: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    /// Optional clip of both heads to `[-B, B]` (in standardized response units).
    #[serde(default)]
    pub output_bound: Option<f64>,
    /// Standardize features on the training set.
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Fit on a standardized response and map predictions back. Pinball loss and
    /// the ReLU penalty are both positively homogeneous, so this only changes
    /// the conditioning of the optimization, not the minimizer.
    #[serde(default = "default_true")]
    pub standardize_response: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_linear_steps")]
    pub linear_steps: usize,
    #[serde(default = "default_linear_lr")]
    pub linear_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: None,
            hidden: default_hidden(),
            adam: AdamConfig::default(),
            epochs: default_epochs(),
            patience: default_patience(),
            tolerance: default_tolerance(),
            batch_size: None,
            full_batch_limit: default_full_batch_limit(),
            minibatch: default_minibatch(),
            output_bound: None,
            standardize: true,
            standardize_response: true,
            seed: 0,
            linear_steps: default_linear_steps(),
            linear_lr: default_linear_lr(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if let Some(l) = self.lambda {
            PenaltyWeight::new(l)?;
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden widths must be a nonempty list of positive sizes"));
        }
        if self.batch_size == Some(0) || self.minibatch == 0 {
            return Err(Error::invalid("batch sizes must be positive"));
        }
        if !(self.adam.lr > 0.0 && self.linear_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if let Some(b) = self.output_bound {
            if !(b > 0.0) {
                return Err(Error::invalid("output bound must be positive"));
            }
        }
        Ok(())
    }

    /// The penalty actually used for a training set of `n` rows.
    pub fn resolved_lambda(&self, n: usize) -> Result<PenaltyWeight> {
        match self.lambda {
            Some(l) => PenaltyWeight::new(l),
            None => Ok(PenaltyWeight::log_n(n)),
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        TrainConfig {
            lambda: Some(lambda),
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }

    fn batch_size_for(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(n),
            None if n <= self.full_batch_limit => n,
            None => self.minibatch.min(n),
        }
    }
}

/// Training record of a neural fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub lambda: f64,
    /// Full-data objective (original response units) at the start of each epoch.
    pub trace: Vec<f64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub stopped_early: bool,
}

fn prepare<T: Real>(train: &Dataset<T>, cfg: &TrainConfig) -> Result<(Scaler, ResponseScale, Array2<T>, Array1<T>)> {
    let scaler = if cfg.standardize && train.n() >= 2 {
        Scaler::fit(train)?
    } else {
        Scaler::identity(train.d())
    };
    let x = scaler.transform_matrix(train.x())?;
    let response = if cfg.standardize_response {
        ResponseScale::fit(train.y())
    } else {
        ResponseScale::identity()
    };
    let y = train.y().mapv(|v| response.forward(v));
    Ok((scaler, response, x, y))
}

/// Fit the penalized quantile pair with Adam on subgradients of the objective.
///
/// The returned network is the iterate with the smallest full-data objective
/// seen during training, so the final objective never exceeds the initial one.
pub fn fit_nccqr<T: Real>(
    train: &Dataset<T>,
    levels: QuantileLevels,
    cfg: &TrainConfig,
) -> Result<(QuantileModel<T>, FitReport)> {
    cfg.validate()?;
    let lambda = cfg.resolved_lambda(train.n())?;
    let (scaler, response, x, y) = prepare(train, cfg)?;
    let n = train.n();
    let unit = response.scale;

    let mut params: NetworkParams<T> =
        init_network::<T>(train.d(), &cfg.hidden, cfg.seed)?.with_output_bound(cfg.output_bound.map(T::of));
    let mut adam = AdamState::new(&params, cfg.adam);
    let batch = cfg.batch_size_for(n);
    let full_batch = batch >= n;
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = SplitMix64::seed_from_u64(cfg.seed ^ SHUFFLE_STREAM);

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best_history: Vec<f64> = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let objective = if full_batch {
            let trace_fw = params.forward_trace(x.view())?;
            let obj = penalized_objective(trace_fw.outputs.view(), y.view(), levels, lambda)?.as_f64();
            check_finite(obj, epoch)?;
            record(&mut best, obj, epoch, &params);
            // Per-sample loss derivatives; backward applies the 1/n mean.
            let mut g = objective_output_grads(trace_fw.outputs.view(), y.view(), levels, lambda)?;
            g.mapv_inplace(|v| v * T::of(n as f64));
            let grads = params.backward_trace(&trace_fw, g.view())?;
            adam.update(&mut params, &grads).map_err(|_| Error::Diverged { epoch, objective: obj })?;
            obj
        } else {
            let preds = params.forward_batch(x.view())?;
            let obj = penalized_objective(preds.view(), y.view(), levels, lambda)?.as_f64();
            check_finite(obj, epoch)?;
            record(&mut best, obj, epoch, &params);
            order.shuffle(&mut shuffle_rng);
            for chunk in order.chunks(batch) {
                let xb = x.select(Axis(0), chunk);
                let yb = y.select(Axis(0), chunk);
                let trace_fw = params.forward_trace(xb.view())?;
                let mut g = objective_output_grads(trace_fw.outputs.view(), yb.view(), levels, lambda)?;
                g.mapv_inplace(|v| v * T::of(chunk.len() as f64));
                let grads = params.backward_trace(&trace_fw, g.view())?;
                adam.update(&mut params, &grads).map_err(|_| Error::Diverged { epoch, objective: obj })?;
            }
            obj
        };
        trace.push(objective * unit);
        best_history.push(best.0);
        if epoch >= cfg.patience && cfg.patience > 0 {
            let gain = best_history[epoch - cfg.patience] - best.0;
            if gain < cfg.tolerance {
                stopped_early = true;
                break;
            }
        }
    }

    // The last update has not been scored yet.
    let preds = params.forward_batch(x.view())?;
    let last = penalized_objective(preds.view(), y.view(), levels, lambda)?.as_f64();
    if last.is_finite() {
        record(&mut best, last, trace.len(), &params);
    }
    let (best_obj, best_epoch, best_params) = best;
    let report = FitReport {
        lambda: lambda.value(),
        initial_objective: trace[0],
        final_objective: best_obj * unit,
        epochs_run: trace.len(),
        best_epoch,
        stopped_early,
        trace,
    };
    let model = QuantileModel {
        kind: ModelKind::Neural(best_params),
        levels,
        scaler,
        response,
    };
    Ok((model, report))
}

fn check_finite(obj: f64, epoch: usize) -> Result<()> {
    if obj.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { epoch, objective: obj })
    }
}

fn record<T: Real>(best: &mut (f64, usize, NetworkParams<T>), obj: f64, epoch: usize, params: &NetworkParams<T>) {
    if obj < best.0 {
        *best = (obj, epoch, params.clone());
    }
}

/// Unpenalized baseline: [`fit_nccqr`] with the penalty forced to zero.
pub fn fit_cqr<T: Real>(
    train: &Dataset<T>,
    levels: QuantileLevels,
    cfg: &TrainConfig,
) -> Result<(QuantileModel<T>, FitReport)> {
    fit_nccqr(train, levels, &cfg.with_lambda(0.0))
}

/// Affine `tau`-quantile regression `a + bᵀx` by subgradient descent on the
/// mean pinball loss. Coefficients are returned in original units.
pub fn fit_linear_qr<T: Real>(train: &Dataset<T>, tau: f64, cfg: &TrainConfig) -> Result<LinearQuantile> {
    cfg.validate()?;
    // Optimize in f64 on standardized data; the problem is small.
    let data = train.cast::<f64>();
    let scaler = if data.n() >= 2 {
        Scaler::fit(&data).unwrap_or_else(|_| Scaler::identity(data.d()))
    } else {
        Scaler::identity(data.d())
    };
    let x = scaler.transform_matrix(data.x())?;
    let response = ResponseScale::fit(data.y());
    let y = data.y().mapv(|v| response.forward(v));
    let (n, d) = x.dim();
    let tau_t = tau;
    crate::losses::check_loss(0.0, tau)?;

    // θ = (a, b); Adam with a 1/√t decaying step, keeping the best iterate.
    let mut theta = vec![0.0; d + 1];
    let mut m = vec![0.0; d + 1];
    let mut v = vec![0.0; d + 1];
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let objective = |theta: &[f64]| -> Result<f64> {
        let fitted = x.dot(&ArrayView1::from(&theta[1..])) + theta[0];
        mean_check_loss((&y - &fitted).view(), tau_t)
    };
    let mut best = (objective(&theta)?, theta.clone());
    for t in 1..=cfg.linear_steps {
        let fitted = x.dot(&ArrayView1::from(&theta[1..])) + theta[0];
        let mut grad = vec![0.0; d + 1];
        for i in 0..n {
            let u = y[i] - fitted[i];
            let g = -(if u > 0.0 { tau } else { tau - 1.0 }) / n as f64;
            grad[0] += g;
            for j in 0..d {
                grad[j + 1] += g * x[[i, j]];
            }
        }
        let lr = cfg.linear_lr / (1.0 + t as f64 / 100.0).sqrt();
        let tf = t as f64;
        for k in 0..=d {
            m[k] = b1 * m[k] + (1.0 - b1) * grad[k];
            v[k] = b2 * v[k] + (1.0 - b2) * grad[k] * grad[k];
            let mh = m[k] / (1.0 - b1.powf(tf));
            let vh = v[k] / (1.0 - b2.powf(tf));
            theta[k] -= lr * mh / (vh.sqrt() + eps);
        }
        let obj = objective(&theta)?;
        if !obj.is_finite() {
            return Err(Error::Diverged {
                epoch: t,
                objective: obj,
            });
        }
        if obj < best.0 {
            best = (obj, theta.clone());
        }
    }
    let theta = best.1;
    // Undo both standardizations: y = μ_y + s_y (a + Σ b_j (x_j - μ_j) / s_j).
    let slope: Vec<f64> = (0..d).map(|j| response.scale * theta[j + 1] / scaler.sd[j]).collect();
    let intercept = response.shift + response.scale * theta[0]
        - (0..d).map(|j| slope[j] * scaler.mean[j]).sum::<f64>();
    Ok(LinearQuantile { intercept, slope })
}

/// Fit the linear baseline at both levels.
pub fn fit_linear_pair<T: Real>(train: &Dataset<T>, levels: QuantileLevels, cfg: &TrainConfig) -> Result<QuantileModel<T>> {
    let lower = fit_linear_qr(train, levels.tau1(), cfg)?;
    let upper = fit_linear_qr(train, levels.tau2(), cfg)?;
    Ok(QuantileModel {
        kind: ModelKind::Linear { lower, upper },
        levels,
        scaler: Scaler::identity(train.d()),
        response: ResponseScale::identity(),
    })
}
