//! Joint prediction of remaining surgical duration, surgical phase and surgeon
//! experience from video, with the training harness, baselines and metrics
//! needed to evaluate it on synthetic surgeries.

pub mod baselines;
pub mod dataset;
mod error;
pub mod evaluation;
pub mod model;
pub mod training;

pub use error::{Error, Result};

/// Floating-point element type of network weights and activations.
///
/// Training runs in `f32`; gradient checks instantiate the same network in `f64`.
pub trait Real:
    num_traits::Float
    + ndarray::LinalgScalar
    + ndarray::ScalarOperand
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + std::iter::Sum
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::ops::DivAssign
{
    fn lit(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}
