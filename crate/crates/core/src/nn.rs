//! Two-headed feedforward ReLU network with hand-written backpropagation and Adam.
//!
//! The network maps `x ∈ R^d` through `D` hidden ReLU layers to an affine output
//! layer of width 2: the first coordinate is the lower quantile head, the second
//! the upper. Layer `i` holds a weight matrix of shape `(w[i+1], w[i])` and a bias
//! of length `w[i+1]`. Batches are row-major `n × d` matrices.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Number of network outputs: lower and upper quantile heads.
pub const N_HEADS: usize = 2;

pub const NETWORK_FORMAT: &str = "nccqr-network";
pub const NETWORK_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T: Real> {
    widths: Vec<usize>,
    weights: Vec<Array2<T>>,
    biases: Vec<Array1<T>>,
    output_bound: Option<T>,
}

/// Parameter-shaped container for gradients and optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T: Real> {
    pub weights: Vec<Array2<T>>,
    pub biases: Vec<Array1<T>>,
}

/// Hidden activations of one forward pass, kept for the backward pass.
///
/// `activations[0]` is the input batch; `activations[l]` for `l ≥ 1` the
/// post-ReLU output of hidden layer `l`. The ReLU mask is recovered as
/// `activation > 0`, so pre-activations need not be stored.
#[derive(Debug)]
pub struct ForwardTrace<T: Real> {
    activations: Vec<Array2<T>>,
    /// `n × 2` network outputs after optional clipping.
    pub outputs: Array2<T>,
    /// Raw outputs before clipping, needed to zero gradients of clipped entries.
    raw_outputs: Option<Array2<T>>,
}

pub fn parameter_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[1] * (w[0] + 1)).sum()
}

/// He-normal initialization: weights `N(0, 2 / fan_in)`, zero biases.
pub fn init_network<T: Real>(d: usize, hidden_widths: &[usize], seed: u64) -> Result<NetworkParams<T>> {
    if d == 0 {
        return Err(Error::invalid("input dimension must be at least 1"));
    }
    if hidden_widths.is_empty() {
        return Err(Error::invalid("at least one hidden layer is required"));
    }
    if hidden_widths.contains(&0) {
        return Err(Error::invalid("hidden widths must be at least 1"));
    }
    let mut widths = Vec::with_capacity(hidden_widths.len() + 2);
    widths.push(d);
    widths.extend_from_slice(hidden_widths);
    widths.push(N_HEADS);

    let mut rng = SplitMix64::seed_from_u64(seed);
    let mut weights = Vec::with_capacity(widths.len() - 1);
    let mut biases = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let sd = (2.0 / fan_in as f64).sqrt();
        let mat = Array2::from_shape_simple_fn((fan_out, fan_in), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::of(sd * z)
        });
        weights.push(mat);
        biases.push(Array1::zeros(fan_out));
    }
    Ok(NetworkParams {
        widths,
        weights,
        biases,
        output_bound: None,
    })
}

impl<T: Real> NetworkParams<T> {
    /// Build from explicit layers, validating shapes and finiteness.
    pub fn from_layers(weights: Vec<Array2<T>>, biases: Vec<Array1<T>>) -> Result<Self> {
        if weights.len() < 2 || weights.len() != biases.len() {
            return Err(Error::shape(format!(
                "need at least 2 layers with one bias per layer, got {} weights and {} biases",
                weights.len(),
                biases.len()
            )));
        }
        let mut widths = vec![weights[0].ncols()];
        for (i, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *widths.last().unwrap() {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but previous width is {}",
                    w.ncols(),
                    widths.last().unwrap()
                )));
            }
            if b.len() != w.nrows() {
                return Err(Error::shape(format!(
                    "layer {i} bias has length {} but weight has {} rows",
                    b.len(),
                    w.nrows()
                )));
            }
            if w.iter().chain(b.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
            widths.push(w.nrows());
        }
        if *widths.last().unwrap() != N_HEADS {
            return Err(Error::shape(format!(
                "output width must be {N_HEADS}, got {}",
                widths.last().unwrap()
            )));
        }
        if widths[0] == 0 || widths.contains(&0) {
            return Err(Error::shape("layer widths must be positive"));
        }
        Ok(NetworkParams {
            widths,
            weights,
            biases,
            output_bound: None,
        })
    }

    pub fn with_output_bound(mut self, bound: Option<T>) -> Self {
        self.output_bound = bound;
        self
    }

    pub fn output_bound(&self) -> Option<T> {
        self.output_bound
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn weights(&self) -> &[Array2<T>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<T>] {
        &self.biases
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn n_params(&self) -> usize {
        parameter_count(&self.widths)
    }

    /// Flat view of all parameters: each layer's weights (row-major) then its bias.
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    /// Inverse of [`to_flat`](Self::to_flat).
    pub fn set_flat(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, network has {}",
                flat.len(),
                self.n_params()
            )));
        }
        let mut it = flat.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Gradients<T> {
        Gradients {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, x: ArrayView1<'_, T>) -> Result<(T, T)> {
        let batch = x.insert_axis(Axis(0));
        let out = self.forward_batch(batch)?;
        Ok((out[[0, 0]], out[[0, 1]]))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        Ok(self.forward_trace(x)?.outputs)
    }

    /// Forward pass retaining hidden activations for [`backward_trace`](Self::backward_trace).
    pub fn forward_trace(&self, x: ArrayView2<'_, T>) -> Result<ForwardTrace<T>> {
        self.check_input(x)?;
        let last = self.n_layers() - 1;
        let mut activations = Vec::with_capacity(self.n_layers());
        activations.push(x.to_owned());
        for l in 0..last {
            let mut z = activations[l].dot(&self.weights[l].t());
            z += &self.biases[l];
            z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            activations.push(z);
        }
        let mut out = activations[last].dot(&self.weights[last].t());
        out += &self.biases[last];
        let raw_outputs = match self.output_bound {
            Some(bound) => {
                let raw = out.clone();
                out.mapv_inplace(|v| v.max(-bound).min(bound));
                Some(raw)
            }
            None => None,
        };
        Ok(ForwardTrace {
            activations,
            outputs: out,
            raw_outputs,
        })
    }

    /// Pull back per-sample output gradients `g` (`n × 2`) to parameter space,
    /// returning `(1/n) Σᵢ ∂(gᵢᵀ f(xᵢ))/∂θ`.
    pub fn backward(&self, x: ArrayView2<'_, T>, output_grads: ArrayView2<'_, T>) -> Result<Gradients<T>> {
        let trace = self.forward_trace(x)?;
        self.backward_trace(&trace, output_grads)
    }

    pub fn backward_trace(&self, trace: &ForwardTrace<T>, output_grads: ArrayView2<'_, T>) -> Result<Gradients<T>> {
        let n = trace.outputs.nrows();
        if output_grads.dim() != (n, N_HEADS) {
            return Err(Error::shape(format!(
                "output gradients are {:?}, expected ({n}, {N_HEADS})",
                output_grads.dim()
            )));
        }
        let mut grads = self.zeros_like();
        if n == 0 {
            return Ok(grads);
        }
        let inv_n = T::one() / T::of(n as f64);
        let mut delta = output_grads.mapv(|g| g * inv_n);
        if let (Some(bound), Some(raw)) = (self.output_bound, &trace.raw_outputs) {
            Zip::from(&mut delta).and(raw).for_each(|d, &r| {
                if r > bound || r < -bound {
                    *d = T::zero();
                }
            });
        }
        for l in (0..self.n_layers()).rev() {
            let input = &trace.activations[l];
            grads.weights[l] = delta.t().dot(input);
            grads.biases[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.weights[l]);
                Zip::from(&mut upstream).and(input).for_each(|u, &a| {
                    if a <= T::zero() {
                        *u = T::zero();
                    }
                });
                delta = upstream;
            }
        }
        Ok(grads)
    }

    fn check_input(&self, x: ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn to_document(&self, metadata: NetworkMetadata) -> NetworkDocument {
        NetworkDocument {
            format: NETWORK_FORMAT.to_string(),
            version: NETWORK_FORMAT_VERSION,
            widths: self.widths.clone(),
            weights: self.weights.iter().map(|w| w.iter().map(|v| v.as_f64()).collect()).collect(),
            biases: self.biases.iter().map(|b| b.iter().map(|v| v.as_f64()).collect()).collect(),
            output_bound: self.output_bound.map(Real::as_f64),
            metadata,
        }
    }

    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.format != NETWORK_FORMAT || doc.version != NETWORK_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported network document {} v{}",
                doc.format, doc.version
            )));
        }
        if doc.widths.len() < 3 || doc.weights.len() != doc.widths.len() - 1 {
            return Err(Error::shape("network document widths and layers disagree"));
        }
        let mut weights = Vec::new();
        for (i, w) in doc.weights.iter().enumerate() {
            let shape = (doc.widths[i + 1], doc.widths[i]);
            let vals = w.iter().map(|&v| T::of(v)).collect();
            weights.push(
                Array2::from_shape_vec(shape, vals)
                    .map_err(|e| Error::shape(format!("layer {i} weights: {e}")))?,
            );
        }
        let biases = doc
            .biases
            .iter()
            .map(|b| Array1::from_iter(b.iter().map(|&v| T::of(v))))
            .collect();
        let params = Self::from_layers(weights, biases)?;
        if params.widths != doc.widths {
            return Err(Error::shape("network document widths and layers disagree"));
        }
        Ok(params.with_output_bound(doc.output_bound.map(T::of)))
    }
}

/// Provenance stored alongside serialized parameters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub scalar: String,
}

/// Versioned JSON form of [`NetworkParams`]; weights are row-major per layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format: String,
    pub version: u32,
    pub widths: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub output_bound: Option<f64>,
    pub metadata: NetworkMetadata,
}

impl<T: Real> Gradients<T> {
    pub fn to_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, params: &NetworkParams<T>) -> bool {
        self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self.weights.iter().zip(&params.weights).all(|(a, b)| a.dim() == b.dim())
            && self.biases.iter().zip(&params.biases).all(|(a, b)| a.dim() == b.dim())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Real> {
    pub config: AdamConfig,
    pub first_moment: Gradients<T>,
    pub second_moment: Gradients<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NetworkParams<T>, config: AdamConfig) -> Self {
        AdamState {
            config,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update applied in place.
    ///
    /// Rejects non-finite gradients before touching any state.
    pub fn update(&mut self, params: &mut NetworkParams<T>, grads: &Gradients<T>) -> Result<()> {
        if !grads.same_shape(params) || !self.first_moment.same_shape(params) {
            return Err(Error::shape("gradient/optimizer shapes do not match the network"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradient at Adam step {}", self.step + 1)));
        }
        self.step += 1;
        let cfg = self.config;
        let t = self.step as f64;
        let b1 = T::of(cfg.beta1);
        let b2 = T::of(cfg.beta2);
        let one = T::one();
        let eps = T::of(cfg.eps);
        // Fold both bias corrections into the step size.
        let step_size = T::of(cfg.lr * (1.0 - cfg.beta2.powf(t)).sqrt() / (1.0 - cfg.beta1.powf(t)));
        let eps_hat = eps * T::of((1.0 - cfg.beta2.powf(t)).sqrt());

        let update = |p: &mut T, &g: &T, m: &mut T, v: &mut T| {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            *p -= step_size * *m / (v.sqrt() + eps_hat);
        };
        for l in 0..params.weights.len() {
            Zip::from(&mut params.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.first_moment.weights[l])
                .and(&mut self.second_moment.weights[l])
                .for_each(update);
            Zip::from(&mut params.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.first_moment.biases[l])
                .and(&mut self.second_moment.biases[l])
                .for_each(update);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::update`].
pub fn adam_step<T: Real>(
    params: &NetworkParams<T>,
    grads: &Gradients<T>,
    state: &AdamState<T>,
) -> Result<(NetworkParams<T>, AdamState<T>)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.update(&mut params, grads)?;
    Ok((params, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn unit_net() -> NetworkParams<f64> {
        // 1 input -> 1 hidden unit -> 2 heads, all weights 1, biases 0.
        NetworkParams::from_layers(
            vec![array![[1.0]], array![[1.0], [1.0]]],
            vec![array![0.0], array![0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn default_architecture_size() {
        let net = init_network::<f64>(1, &[256, 256, 256], 7).unwrap();
        assert_eq!(net.widths(), &[1, 256, 256, 256, 2]);
        // 256·2 + 2·(256·257) + 2·257
        assert_eq!(net.n_params(), 132_610);
        assert_eq!(net.to_flat().len(), 132_610);
    }

    #[test]
    fn init_is_deterministic_and_validates() {
        let a = init_network::<f64>(3, &[8, 4], 11).unwrap();
        let b = init_network::<f64>(3, &[8, 4], 11).unwrap();
        assert_eq!(a.to_flat(), b.to_flat());
        let c = init_network::<f64>(3, &[8, 4], 12).unwrap();
        assert_ne!(a.to_flat(), c.to_flat());
        assert!(a.biases().iter().all(|b| b.iter().all(|&v| v == 0.0)));
        assert!(init_network::<f64>(0, &[8], 1).is_err());
        assert!(init_network::<f64>(2, &[], 1).is_err());
        assert!(init_network::<f64>(2, &[4, 0], 1).is_err());
    }

    #[test]
    fn he_initialization_variance() {
        let net = init_network::<f64>(200, &[400], 3).unwrap();
        let w = &net.weights()[0];
        let n = w.len() as f64;
        let mean = w.sum() / n;
        let var = w.mapv(|v| (v - mean).powi(2)).sum() / n;
        assert!(mean.abs() < 0.002);
        assert_relative_eq!(var, 2.0 / 200.0, max_relative = 0.02);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = init_network::<f64>(3, &[5, 4], 1).unwrap();
        let zeros = vec![0.0; net.n_params()];
        net.set_flat(&zeros).unwrap();
        let out = net.forward(array![0.3, -2.0, 7.0].view()).unwrap();
        assert_eq!(out, (0.0, 0.0));
    }

    #[test]
    fn unit_network_passes_relu_through() {
        let net = unit_net();
        assert_eq!(net.forward(array![2.0].view()).unwrap(), (2.0, 2.0));
        assert_eq!(net.forward(array![-3.0].view()).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn dead_hidden_layer_returns_output_bias() {
        let net = NetworkParams::from_layers(
            vec![array![[1.0], [2.0]], array![[0.5, -1.0], [3.0, 1.0]]],
            vec![array![-1.0, -1.0], array![0.25, -0.75]],
        )
        .unwrap();
        assert_eq!(net.forward(array![-4.0].view()).unwrap(), (0.25, -0.75));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = init_network::<f64>(2, &[3], 0).unwrap();
        assert!(net.forward(array![1.0].view()).is_err());
        let x = Array2::<f64>::zeros((4, 3));
        assert!(net.forward_batch(x.view()).is_err());
        let g = Array2::<f64>::zeros((3, 2));
        assert!(net.backward(Array2::zeros((4, 2)).view(), g.view()).is_err());
    }

    #[test]
    fn batch_matches_single_rows() {
        let net = init_network::<f64>(2, &[6, 6], 5).unwrap();
        let x = array![[0.1, 0.2], [-0.5, 0.9], [1.5, -1.0]];
        let out = net.forward_batch(x.view()).unwrap();
        for i in 0..3 {
            let (a, b) = net.forward(x.row(i)).unwrap();
            assert_relative_eq!(out[[i, 0]], a, epsilon = 1e-14);
            assert_relative_eq!(out[[i, 1]], b, epsilon = 1e-14);
        }
        let rev = array![[1.5, -1.0], [-0.5, 0.9], [0.1, 0.2]];
        let out_rev = net.forward_batch(rev.view()).unwrap();
        for i in 0..3 {
            assert_eq!(out_rev.row(i), out.row(2 - i));
        }
        let empty = Array2::<f64>::zeros((0, 2));
        assert_eq!(net.forward_batch(empty.view()).unwrap().dim(), (0, 2));
    }

    #[test]
    fn zero_output_grads_give_zero_gradients() {
        let net = init_network::<f64>(2, &[4, 4], 9).unwrap();
        let x = array![[0.3, 0.1], [0.7, -0.2]];
        let g = net.backward(x.view(), Array2::zeros((2, 2)).view()).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_backward_matches_chain_rule() {
        // f_k(x) = v_k · relu(w x + b) + c_k. With w = 0.5, b = 0.25, x = 2:
        // h = 1.25, df_k/dv_k = h, df_k/dc_k = 1, df_k/dw = v_k x, df_k/db = v_k.
        let net = NetworkParams::from_layers(
            vec![array![[0.5]], array![[2.0], [-3.0]]],
            vec![array![0.25], array![0.1, 0.2]],
        )
        .unwrap();
        let x = array![[2.0]];
        let g = array![[1.5, -0.5]];
        let grads = net.backward(x.view(), g.view()).unwrap();
        // dL/dw = (1.5·2 + (-0.5)(-3))·x = 4.5·2 = 9; dL/db = 4.5
        assert_relative_eq!(grads.weights[0][[0, 0]], 9.0);
        assert_relative_eq!(grads.biases[0][0], 4.5);
        assert_relative_eq!(grads.weights[1][[0, 0]], 1.5 * 1.25);
        assert_relative_eq!(grads.weights[1][[1, 0]], -0.5 * 1.25);
        assert_relative_eq!(grads.biases[1][0], 1.5);
        assert_relative_eq!(grads.biases[1][1], -0.5);
    }

    #[test]
    fn backward_uses_mean_over_batch() {
        let net = unit_net();
        let x = array![[2.0], [2.0]];
        let g = array![[1.0, 0.0], [1.0, 0.0]];
        let two = net.backward(x.view(), g.view()).unwrap();
        let one = net.backward(array![[2.0]].view(), array![[1.0, 0.0]].view()).unwrap();
        assert_eq!(two, one);
    }

    #[test]
    fn output_bound_clips_and_stops_gradient() {
        let net = unit_net().with_output_bound(Some(1.0));
        assert_eq!(net.forward(array![3.0].view()).unwrap(), (1.0, 1.0));
        let g = net.backward(array![[3.0]].view(), array![[1.0, 1.0]].view()).unwrap();
        assert!(g.to_flat().iter().all(|&v| v == 0.0));
        assert_eq!(net.forward(array![0.5].view()).unwrap(), (0.5, 0.5));
    }

    #[test]
    fn adam_zero_gradient_from_fresh_state_keeps_params() {
        let net = init_network::<f64>(2, &[3], 4).unwrap();
        let state = AdamState::new(&net, AdamConfig::default());
        let (next, state) = adam_step(&net, &net.zeros_like(), &state).unwrap();
        assert_eq!(next, net);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn adam_zero_gradient_decays_moments() {
        let net = init_network::<f64>(1, &[1], 4).unwrap();
        let mut state = AdamState::new(&net, AdamConfig::default());
        state.first_moment.biases[0][0] = 1.0;
        state.second_moment.biases[0][0] = 4.0;
        let (_, state) = adam_step(&net, &net.zeros_like(), &state).unwrap();
        assert_relative_eq!(state.first_moment.biases[0][0], 0.9);
        assert_relative_eq!(state.second_moment.biases[0][0], 4.0 * 0.999);
    }

    #[test]
    fn adam_first_step_by_hand() {
        // Step 1: m = 0.1 g, v = 0.001 g², m̂ = g, v̂ = g², Δ = -lr g / (|g| + eps).
        let net = unit_net();
        let mut grads = net.zeros_like();
        grads.weights[0][[0, 0]] = 0.2;
        grads.biases[1][1] = -3.0;
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let (next, state) = adam_step(&net, &grads, &AdamState::new(&net, cfg)).unwrap();
        assert_relative_eq!(next.weights()[0][[0, 0]], 1.0 - 0.01 * 0.2 / (0.2 + 1e-8), epsilon = 1e-15);
        assert_relative_eq!(next.biases()[1][1], 0.0 + 0.01 * 3.0 / (3.0 + 1e-8), epsilon = 1e-15);
        assert_eq!(next.weights()[1], net.weights()[1]);
        assert_relative_eq!(state.first_moment.weights[0][[0, 0]], 0.02, epsilon = 1e-16);
        assert_relative_eq!(state.second_moment.biases[1][1], 0.009, epsilon = 1e-16);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let net = unit_net();
        let mut grads = net.zeros_like();
        grads.biases[0][0] = f64::NAN;
        let state = AdamState::new(&net, AdamConfig::default());
        assert!(matches!(adam_step(&net, &grads, &state), Err(Error::NonFinite(_))));
    }

    #[test]
    fn document_round_trip() {
        let net = init_network::<f32>(3, &[4, 5], 2).unwrap().with_output_bound(Some(10.0));
        let meta = NetworkMetadata {
            seed: 2,
            config_hash: "abc".into(),
            scalar: "f32".into(),
        };
        let doc = net.to_document(meta);
        let json = serde_json::to_string(&doc).unwrap();
        let back: NetworkDocument = serde_json::from_str(&json).unwrap();
        assert_eq!(NetworkParams::<f32>::from_document(&back).unwrap(), net);
        let mut bad = back.clone();
        bad.widths[1] = 7;
        assert!(NetworkParams::<f32>::from_document(&bad).is_err());
    }

    #[test]
    fn from_layers_rejects_bad_shapes() {
        assert!(NetworkParams::<f64>::from_layers(vec![array![[1.0]]], vec![array![0.0]]).is_err());
        assert!(NetworkParams::from_layers(
            vec![array![[1.0]], array![[1.0], [1.0], [1.0]]],
            vec![array![0.0], array![0.0, 0.0, 0.0]],
        )
        .is_err());
        assert!(NetworkParams::from_layers(
            vec![array![[f64::NAN]], array![[1.0], [1.0]]],
            vec![array![0.0], array![0.0, 0.0]],
        )
        .is_err());
    }
}
