//! Numerical laboratory for text-bridged RGB–infrared feature fusion.
//!
//! The crate covers the fusion block itself ([`bridge`]), the bidirectional
//! vision–text alignment and region–text matching head ([`alignment`]), the
//! frequency-decomposed infrared encoder ([`freq`]), two comparison fusion
//! paradigms ([`baselines`]), an analytic and instrumented FLOPs model
//! ([`complexity`]) and a degradation / response-measurement harness
//! ([`degradation`]). Everything runs on the small dense [`Tensor`] type and
//! is differentiable through the [`autodiff`] tape.

pub mod alignment;
pub mod autodiff;
pub mod baselines;
pub mod bridge;
pub mod complexity;
pub mod degradation;
pub mod error;
pub mod freq;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
