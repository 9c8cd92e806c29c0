//! Particle-based latent inference (kernel proximal sampling) for
//! nonlinear latent variable soft sensors, with entropic optimal transport
//! for fitting the amortized encoder.
//!
//! The numeric core (`numcore`, `kernel`, `score`, `sampler`, `ot`) is
//! generic over `f32`/`f64`; data handling, training and metrics use `f64`.

// `!(x > 0)` is used on purpose so NaN fails validation; index loops mirror
// the matrix formulas they implement.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod checks;
pub mod data;
pub mod demo;
pub mod error;
pub mod kernel;
pub mod metrics;
pub mod numcore;
pub mod ot;
pub mod rng;
pub mod sampler;
pub mod score;
pub mod train;

pub use error::{Error, Result};

pub type Matrix = numcore::Matrix<f64>;
pub type Matrix32 = numcore::Matrix<f32>;
pub type MlpParams = numcore::MlpParams<f64>;
pub type MlpGradients = numcore::MlpGradients<f64>;
pub type ParticleEnsemble = sampler::ParticleEnsemble<f64>;
pub type TransportPlan = ot::TransportPlan<f64>;
pub type KproxConfig = sampler::KproxConfig<f64>;
pub type SinkhornConfig = ot::SinkhornConfig<f64>;
