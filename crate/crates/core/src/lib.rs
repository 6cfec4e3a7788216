//! Non-crossing conformalized quantile regression.
//!
//! A two-headed ReLU network is fitted to a lower and an upper conditional
//! quantile under the pinball loss plus a ReLU penalty on crossings. A split
//! calibration set then shifts both heads by an order statistic of the
//! conformity scores, giving finite-sample marginal coverage.
//!
//! All numerics are generic over [`Real`] (`f32` or `f64`); the aliases at the
//! crate root fix the reference `f64` precision.

pub mod conformal;
pub mod datasets;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod model_selection;
pub mod nn;
pub mod provenance;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Real;

pub type NetworkParams = nn::NetworkParams<f64>;
pub type Gradients = nn::Gradients<f64>;
pub type AdamState = nn::AdamState<f64>;
pub type Dataset = datasets::Dataset<f64>;
pub type QuantileModel = conformal::QuantileModel<f64>;
pub type ConformalBand = conformal::ConformalBand<f64>;

/// Single-precision variants, used for the heavier training experiments.
pub mod f32 {
    pub type NetworkParams = crate::nn::NetworkParams<f32>;
    pub type Dataset = crate::datasets::Dataset<f32>;
    pub type QuantileModel = crate::conformal::QuantileModel<f32>;
    pub type ConformalBand = crate::conformal::ConformalBand<f32>;
}
