use serde::{Deserialize, Serialize};

use super::mlp::{MlpGradients, MlpParams};
use super::scalar::Real;
use crate::error::{Error, Result};

/// First and second moment buffers plus hyperparameters for Adam.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct AdamState<T> {
    pub m: MlpGradients<T>,
    pub v: MlpGradients<T>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub lr: T,
    pub eps: T,
}

impl<T: Real> AdamState<T> {
    /// Fresh state with the usual defaults (0.9, 0.999, 1e-8).
    pub fn new(params: &MlpParams<T>, lr: T) -> Self {
        Self {
            m: MlpGradients::zeros_like(params),
            v: MlpGradients::zeros_like(params),
            step: 0,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            lr,
            eps: T::lit(1e-8),
        }
    }
}

/// One bias-corrected Adam descent step.
///
/// Rejects the step, leaving parameters and state untouched, when any gradient
/// entry is non-finite.
pub fn adam_step<T: Real>(
    params: &mut MlpParams<T>,
    grads: &MlpGradients<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    grads.check_congruent(params)?;
    state.m.check_congruent(params)?;
    state.v.check_congruent(params)?;
    if !grads.is_finite() {
        return Err(Error::NonFinite("adam gradients"));
    }
    let (b1, b2) = (state.beta1, state.beta2);
    if !(T::zero()..T::one()).contains(&b1) || !(T::zero()..T::one()).contains(&b2) {
        return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let apply = state.lr != T::zero();

    let tensors = params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        for (((p, &g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            if apply {
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
            }
        }
    }
    Ok(())
}
