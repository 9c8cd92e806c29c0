//! Dense matrices, a small MLP with manual backpropagation, Adam, and
//! finite-difference helpers. Everything here is generic over [`Real`].

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod mlp;
pub mod scalar;

pub use adam::{adam_step, AdamState};
pub use matrix::Matrix;
pub use mlp::{Activation, ForwardCache, MlpGradients, MlpParams};
pub use scalar::Real;
