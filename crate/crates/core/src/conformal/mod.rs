//! Split-conformal calibration of a fitted quantile pair.
//!
//! Given a model `(f̂₁, f̂₂)` fitted on a training split, each calibration point
//! gets the score `E = max(f̂₁(x) - y, y - f̂₂(x))`. With `m` scores and
//! `k = ⌈(1 - α)(m + 1)⌉`, the offset `q̂` is the `k`-th smallest score and the
//! band is `[f̂₁(x) - q̂, f̂₂(x) + q̂]`. No clamping is applied: a crossed pair
//! with a small `q̂` yields `hi < lo`.

mod train;

pub use train::{fit_cqr, fit_linear_pair, fit_linear_qr, fit_nccqr, FitReport, TrainConfig};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::datasets::{Dataset, Scaler};
use crate::error::{Error, Result};
use crate::losses::QuantileLevels;
use crate::nn::{NetworkDocument, NetworkMetadata, NetworkParams};
use crate::scalar::Real;

pub const BAND_FORMAT: &str = "nccqr-band";
pub const BAND_FORMAT_VERSION: u32 = 1;

/// Affine map `y ↦ (y - shift) / scale` applied to the response during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseScale {
    pub shift: f64,
    pub scale: f64,
}

impl ResponseScale {
    pub fn identity() -> Self {
        ResponseScale { shift: 0.0, scale: 1.0 }
    }

    /// Mean and sample standard deviation; a constant response keeps unit scale.
    pub fn fit<T: Real>(y: ArrayView1<'_, T>) -> Self {
        let n = y.len();
        let shift = y.iter().map(|v| v.as_f64()).sum::<f64>() / n.max(1) as f64;
        let var = if n > 1 {
            y.iter().map(|v| (v.as_f64() - shift).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let scale = if var.sqrt() > 1e-12 * shift.abs().max(1.0) {
            var.sqrt()
        } else {
            1.0
        };
        ResponseScale { shift, scale }
    }

    pub fn forward<T: Real>(&self, y: T) -> T {
        T::of((y.as_f64() - self.shift) / self.scale)
    }

    pub fn inverse<T: Real>(&self, v: T) -> T {
        T::of(v.as_f64() * self.scale + self.shift)
    }
}

/// One affine quantile function `a + bᵀx`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearQuantile {
    pub intercept: f64,
    pub slope: Vec<f64>,
}

impl LinearQuantile {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.slope.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind<T: Real> {
    Neural(NetworkParams<T>),
    Linear { lower: LinearQuantile, upper: LinearQuantile },
}

/// A fitted predictor `x ↦ (f̂₁(x), f̂₂(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileModel<T: Real> {
    pub kind: ModelKind<T>,
    pub levels: QuantileLevels,
    /// Feature standardization applied before the network.
    pub scaler: Scaler,
    /// Response standardization the network was trained under.
    pub response: ResponseScale,
}

impl<T: Real> QuantileModel<T> {
    pub fn input_dim(&self) -> usize {
        match &self.kind {
            ModelKind::Neural(net) => net.input_dim(),
            ModelKind::Linear { lower, .. } => lower.slope.len(),
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self.kind, ModelKind::Neural(_))
    }

    /// `n × 2` matrix of `(f̂₁, f̂₂)` per row.
    pub fn predict(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(format!(
                "model expects {} features, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        match &self.kind {
            ModelKind::Neural(net) => {
                let scaled = self.scaler.transform_matrix(x)?;
                let mut out = net.forward_batch(scaled.view())?;
                out.mapv_inplace(|v| self.response.inverse(v));
                Ok(out)
            }
            ModelKind::Linear { lower, upper } => {
                let mut out = Array2::zeros((x.nrows(), 2));
                for (mut o, row) in out.rows_mut().into_iter().zip(x.rows()) {
                    let r: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
                    o[0] = T::of(lower.eval(&r));
                    o[1] = T::of(upper.eval(&r));
                }
                Ok(out)
            }
        }
    }

    pub fn predict_one(&self, x: ArrayView1<'_, T>) -> Result<(T, T)> {
        let out = self.predict(x.insert_axis(Axis(0)))?;
        Ok((out[[0, 0]], out[[0, 1]]))
    }

    pub fn to_document(&self, metadata: NetworkMetadata) -> ModelDocument {
        let (kind, network, linear) = match &self.kind {
            ModelKind::Neural(net) => ("neural", Some(net.to_document(metadata)), None),
            ModelKind::Linear { lower, upper } => (
                "linear",
                None,
                Some(LinearPair {
                    lower: lower.clone(),
                    upper: upper.clone(),
                }),
            ),
        };
        ModelDocument {
            kind: kind.to_string(),
            levels: self.levels,
            scaler: self.scaler.clone(),
            response: self.response,
            network,
            linear,
        }
    }

    pub fn from_document(doc: &ModelDocument) -> Result<Self> {
        let kind = match (doc.kind.as_str(), &doc.network, &doc.linear) {
            ("neural", Some(net), _) => ModelKind::Neural(NetworkParams::from_document(net)?),
            ("linear", _, Some(pair)) => {
                if pair.lower.slope.len() != pair.upper.slope.len() {
                    return Err(Error::shape("linear quantile slopes differ in length"));
                }
                ModelKind::Linear {
                    lower: pair.lower.clone(),
                    upper: pair.upper.clone(),
                }
            }
            (k, _, _) => return Err(Error::invalid(format!("model document of kind '{k}' is incomplete"))),
        };
        let model = QuantileModel {
            kind,
            levels: doc.levels,
            scaler: doc.scaler.clone(),
            response: doc.response,
        };
        if model.scaler.dim() != model.input_dim() {
            return Err(Error::shape("scaler and model input dimensions differ"));
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPair {
    pub lower: LinearQuantile,
    pub upper: LinearQuantile,
}

/// JSON form of a [`QuantileModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub kind: String,
    pub levels: QuantileLevels,
    pub scaler: Scaler,
    pub response: ResponseScale,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear: Option<LinearPair>,
}

/// A quantile model with its calibrated offset.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalBand<T: Real> {
    pub model: QuantileModel<T>,
    pub q_hat: T,
    pub alpha: f64,
    pub calib_size: usize,
}

/// JSON form of a [`ConformalBand`], with free-form provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandDocument {
    pub format: String,
    pub version: u32,
    pub alpha: f64,
    pub q_hat: f64,
    pub calib_size: usize,
    pub model: ModelDocument,
    #[serde(default)]
    pub provenance: serde_json::Value,
}

impl<T: Real> ConformalBand<T> {
    /// `(f̂₁(x) - q̂, f̂₂(x) + q̂)`.
    pub fn predict_interval(&self, x: ArrayView1<'_, T>) -> Result<(T, T)> {
        let (f1, f2) = self.model.predict_one(x)?;
        Ok((f1 - self.q_hat, f2 + self.q_hat))
    }

    /// `n × 2` matrix of `(lo, hi)` rows.
    pub fn predict_intervals(&self, x: ArrayView2<'_, T>) -> Result<Array2<T>> {
        let mut out = self.model.predict(x)?;
        out.column_mut(0).mapv_inplace(|v| v - self.q_hat);
        out.column_mut(1).mapv_inplace(|v| v + self.q_hat);
        Ok(out)
    }

    pub fn to_document(&self, metadata: NetworkMetadata, provenance: serde_json::Value) -> BandDocument {
        BandDocument {
            format: BAND_FORMAT.to_string(),
            version: BAND_FORMAT_VERSION,
            alpha: self.alpha,
            q_hat: self.q_hat.as_f64(),
            calib_size: self.calib_size,
            model: self.model.to_document(metadata),
            provenance,
        }
    }

    pub fn from_document(doc: &BandDocument) -> Result<Self> {
        if doc.format != BAND_FORMAT || doc.version != BAND_FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported band document {} v{}", doc.format, doc.version)));
        }
        check_alpha_band(doc.alpha)?;
        if !doc.q_hat.is_finite() {
            return Err(Error::NonFinite("band offset".into()));
        }
        Ok(ConformalBand {
            model: QuantileModel::from_document(&doc.model)?,
            q_hat: T::of(doc.q_hat),
            alpha: doc.alpha,
            calib_size: doc.calib_size,
        })
    }
}

fn check_alpha_band(alpha: f64) -> Result<()> {
    if 0.0 < alpha && alpha < 0.5 {
        Ok(())
    } else {
        Err(Error::invalid(format!("band alpha must lie in (0, 0.5), got {alpha}")))
    }
}

/// Scores from explicit predictions: `max(f1 - y, y - f2)` per row.
pub fn scores_from_predictions<T: Real>(preds: ArrayView2<'_, T>, y: ArrayView1<'_, T>) -> Result<Array1<T>> {
    if preds.nrows() != y.len() || preds.ncols() != 2 {
        return Err(Error::shape(format!("predictions {:?} vs {} responses", preds.dim(), y.len())));
    }
    Ok(Array1::from_iter(
        preds.rows().into_iter().zip(y).map(|(p, &yi)| (p[0] - yi).max(yi - p[1])),
    ))
}

pub fn conformity_scores<T: Real>(model: &QuantileModel<T>, calib: &Dataset<T>) -> Result<Array1<T>> {
    let preds = model.predict(calib.x())?;
    scores_from_predictions(preds.view(), calib.y())
}

/// Rank `⌈(1 - α)(m + 1)⌉` (1-based) used for `m` calibration scores.
pub fn conformal_rank(m: usize, alpha: f64) -> usize {
    // Guard against (1 - α)(m + 1) landing a hair above an integer.
    let raw = (1.0 - alpha) * (m as f64 + 1.0);
    (raw - 1e-9 * raw.max(1.0)).ceil().max(1.0) as usize
}

/// The `⌈(1 - α)(m + 1)⌉`-th smallest score.
pub fn empirical_quantile<T: Real>(scores: &[T], alpha: f64) -> Result<T> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("conformity score".into()));
    }
    let m = scores.len();
    let k = conformal_rank(m, alpha);
    if k > m {
        return Err(Error::CalibrationTooSmall { k, m, alpha });
    }
    let mut sorted = scores.to_vec();
    let (_, kth, _) = sorted.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    Ok(*kth)
}

pub fn calibrate<T: Real>(model: QuantileModel<T>, calib: &Dataset<T>, alpha: f64) -> Result<ConformalBand<T>> {
    check_alpha_band(alpha)?;
    let scores = conformity_scores(&model, calib)?;
    let q_hat = empirical_quantile(scores.as_slice().unwrap(), alpha)?;
    Ok(ConformalBand {
        model,
        q_hat,
        alpha,
        calib_size: calib.n(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::SplitMix64;

    fn linear_model(lo: (f64, f64), hi: (f64, f64)) -> QuantileModel<f64> {
        QuantileModel {
            kind: ModelKind::Linear {
                lower: LinearQuantile {
                    intercept: lo.0,
                    slope: vec![lo.1],
                },
                upper: LinearQuantile {
                    intercept: hi.0,
                    slope: vec![hi.1],
                },
            },
            levels: QuantileLevels::symmetric(0.1).unwrap(),
            scaler: Scaler::identity(1),
            response: ResponseScale::identity(),
        }
    }

    /// Smallest score `q` with `#{E ≤ q} ≥ k`, `k = ⌈(100 - pct)(m + 1) / 100⌉`
    /// in integer arithmetic.
    fn brute_force_quantile(scores: &[f64], alpha_pct: usize) -> Option<f64> {
        let m = scores.len();
        let k = ((100 - alpha_pct) * (m + 1)).div_ceil(100);
        if k > m {
            return None;
        }
        let mut best: Option<f64> = None;
        for &q in scores {
            let count = scores.iter().filter(|&&e| e <= q).count();
            if count >= k && best.is_none_or(|b| q < b) {
                best = Some(q);
            }
        }
        best
    }

    #[test]
    fn scores_examples() {
        let model = linear_model((0.0, 0.0), (1.0, 0.0));
        let calib = Dataset::new(array![[0.3], [0.3], [0.3]], array![0.5, 1.5, -0.25], None).unwrap();
        let s = conformity_scores(&model, &calib).unwrap();
        assert_relative_eq!(s[0], -0.5);
        assert_relative_eq!(s[1], 0.5);
        assert_relative_eq!(s[2], 0.25);
    }

    #[test]
    fn quantile_examples() {
        let scores: Vec<f64> = (1..=99).map(f64::from).collect();
        assert_eq!(empirical_quantile(&scores, 0.1).unwrap(), 90.0);
        assert!(matches!(
            empirical_quantile(&[5.0], 0.4),
            Err(Error::CalibrationTooSmall { k: 2, m: 1, .. })
        ));
        assert_eq!(conformal_rank(1999, 0.1), 1800);
        assert_eq!(conformal_rank(99, 0.1), 90);
        assert_eq!(conformal_rank(9, 0.5), 5);
        assert!(empirical_quantile(&[1.0, 2.0], 0.0).is_err());
    }

    #[test]
    fn quantile_matches_brute_force() {
        let mut rng = SplitMix64::seed_from_u64(42);
        for m in 1..=50 {
            for &(alpha, pct) in &[(0.05, 5), (0.1, 10), (0.2, 20), (0.5, 50)] {
                for _ in 0..20 {
                    let scores: Vec<f64> = (0..m).map(|_| (rng.random::<f64>() * 10.0).round() - 5.0).collect();
                    let got = empirical_quantile(&scores, alpha).ok();
                    assert_eq!(got, brute_force_quantile(&scores, pct), "m={m} alpha={alpha}");
                }
            }
        }
    }

    #[test]
    fn calibrate_shrinks_when_all_inside() {
        let model = linear_model((-1.0, 0.0), (1.0, 0.0));
        let y: Vec<f64> = (0..50).map(|i| -0.5 + i as f64 / 49.0).collect();
        let calib = Dataset::new(Array2::zeros((50, 1)), Array1::from(y), None).unwrap();
        let band = calibrate(model, &calib, 0.1).unwrap();
        assert!(band.q_hat <= -0.5 + 1e-12);
        assert_eq!(band.calib_size, 50);
        assert!(calibrate(linear_model((0.0, 0.0), (1.0, 0.0)), &calib, 0.6).is_err());
    }

    #[test]
    fn calibrate_too_small_surfaces_index_error() {
        let calib = Dataset::new(array![[0.0]], array![0.0], None).unwrap();
        let err = calibrate(linear_model((0.0, 0.0), (1.0, 0.0)), &calib, 0.1).unwrap_err();
        assert!(matches!(err, Error::CalibrationTooSmall { k: 2, m: 1, .. }));
    }

    #[test]
    fn interval_examples() {
        let mk = |q: f64, lo: f64, hi: f64| ConformalBand {
            model: linear_model((lo, 0.0), (hi, 0.0)),
            q_hat: q,
            alpha: 0.1,
            calib_size: 10,
        };
        let x = array![0.7];
        assert_eq!(mk(0.0, -1.0, 2.0).predict_interval(x.view()).unwrap(), (-1.0, 2.0));
        assert_eq!(mk(0.5, 3.0, 3.0).predict_interval(x.view()).unwrap(), (2.5, 3.5));
        let (lo, hi) = mk(0.2, 1.0, 0.0).predict_interval(x.view()).unwrap();
        assert_relative_eq!(lo, 0.8);
        assert_relative_eq!(hi, 0.2);
        assert!(hi < lo);
        assert!(mk(0.0, 0.0, 1.0).predict_interval(array![1.0, 2.0].view()).is_err());
    }

    #[test]
    fn band_document_round_trip() {
        let net = init_network::<f32>(2, &[4], 1).unwrap();
        let band = ConformalBand {
            model: QuantileModel {
                kind: ModelKind::Neural(net),
                levels: QuantileLevels::new(0.1, 0.9).unwrap(),
                scaler: Scaler {
                    mean: vec![0.5, 1.0],
                    sd: vec![2.0, 3.0],
                },
                response: ResponseScale { shift: 1.0, scale: 2.0 },
            },
            q_hat: 0.25f32,
            alpha: 0.2,
            calib_size: 100,
        };
        let doc = band.to_document(NetworkMetadata::default(), serde_json::json!({"seed": 3}));
        let text = serde_json::to_string(&doc).unwrap();
        let back = ConformalBand::<f32>::from_document(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, band);
        let x = array![[0.1f32, 0.2], [1.0, -1.0]];
        assert_eq!(back.predict_intervals(x.view()).unwrap(), band.predict_intervals(x.view()).unwrap());
    }

    #[test]
    fn band_width_identity() {
        let model = linear_model((0.0, 1.0), (2.0, -0.5));
        let band = ConformalBand {
            model,
            q_hat: 0.3,
            alpha: 0.1,
            calib_size: 5,
        };
        let x = array![[0.0], [1.0], [4.0]];
        let raw = band.model.predict(x.view()).unwrap();
        let iv = band.predict_intervals(x.view()).unwrap();
        for i in 0..3 {
            assert_relative_eq!(iv[[i, 1]] - iv[[i, 0]], raw[[i, 1]] - raw[[i, 0]] + 0.6, epsilon = 1e-12);
        }
    }

    proptest! {
        #[test]
        fn quantile_permutation_invariant_and_monotone(
            scores in prop::collection::vec(-100f64..100.0, 20..80),
            seed in 0u64..1000,
        ) {
            let mut shuffled = scores.clone();
            use rand::seq::SliceRandom;
            shuffled.shuffle(&mut SplitMix64::seed_from_u64(seed));
            let alphas = [0.05, 0.1, 0.2, 0.3, 0.5];
            let mut prev = f64::INFINITY;
            for &a in &alphas {
                let q = empirical_quantile(&scores, a).unwrap();
                prop_assert_eq!(q, empirical_quantile(&shuffled, a).unwrap());
                prop_assert!(q <= prev);
                prev = q;
            }
        }

        #[test]
        fn score_sign_characterizes_inclusion(f1 in -5f64..5.0, w in -2f64..5.0, y in -10f64..10.0) {
            let f2 = f1 + w;
            let s = scores_from_predictions(array![[f1, f2]].view(), array![y].view()).unwrap()[0];
            prop_assert_eq!(s <= 0.0, f1 <= y && y <= f2);
        }
    }
}
