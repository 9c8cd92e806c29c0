//! Dense feed-forward network with hand-written backpropagation.
//!
//! Layer `l` computes `pre = W_l · a_l + b_l`. Hidden layers apply the
//! configured activation; the last layer is affine. Weights are row-major
//! with shape `(dims[l + 1], dims[l])`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::scalar::{all_finite, Real};
use crate::error::{ensure_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(T::zero()),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the activation value.
    #[inline]
    fn derivative<T: Real>(self, pre: T, post: T) -> T {
        match self {
            Activation::Tanh => T::one() - post * post,
            Activation::Relu => {
                if pre > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

/// Weights and biases of a multilayer perceptron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    bound = "T: Real",
    try_from = "MlpRecord<T>",
    into = "MlpRecord<T>"
)]
pub struct MlpParams<T> {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
    activation: Activation,
}

/// JSON checkpoint layout.
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct MlpRecord<T> {
    layer_dims: Vec<usize>,
    activation: Activation,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
}

impl<T: Real> From<MlpParams<T>> for MlpRecord<T> {
    fn from(p: MlpParams<T>) -> Self {
        MlpRecord {
            layer_dims: p.layer_dims,
            activation: p.activation,
            weights: p.weights.into_iter().map(Matrix::into_vec).collect(),
            biases: p.biases,
        }
    }
}

impl<T: Real> TryFrom<MlpRecord<T>> for MlpParams<T> {
    type Error = Error;

    fn try_from(r: MlpRecord<T>) -> Result<Self> {
        let mut p = MlpParams::zeros(&r.layer_dims, r.activation)?;
        ensure_len("checkpoint weight layers", p.weights.len(), r.weights.len())?;
        ensure_len("checkpoint bias layers", p.biases.len(), r.biases.len())?;
        for (l, (w, b)) in r.weights.into_iter().zip(r.biases).enumerate() {
            let (rows, cols) = p.weights[l].shape();
            p.weights[l] = Matrix::from_vec(rows, cols, w)?;
            ensure_len("checkpoint bias", rows, b.len())?;
            p.biases[l] = b;
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters"));
        }
        Ok(p)
    }
}

/// Per-layer values saved by the forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// `activations[0]` is the input, `activations[L]` the output.
    activations: Vec<Vec<T>>,
    pre_activations: Vec<Vec<T>>,
}

impl<T: Real> ForwardCache<T> {
    pub fn input(&self) -> &[T] {
        &self.activations[0]
    }

    pub fn output(&self) -> &[T] {
        self.activations.last().expect("cache holds at least the input")
    }
}

impl<T: Real> MlpParams<T> {
    /// All-zero network.
    pub fn zeros(layer_dims: &[usize], activation: Activation) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "mlp needs at least two positive layer sizes, got {layer_dims:?}"
            )));
        }
        let weights = layer_dims
            .windows(2)
            .map(|w| Matrix::zeros(w[1], w[0]))
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![T::zero(); n]).collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Xavier-uniform weights, zero biases.
    pub fn random<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        let mut p = Self::zeros(layer_dims, activation)?;
        for w in &mut p.weights {
            let (fan_out, fan_in) = w.shape();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for x in w.as_mut_slice() {
                *x = T::lit(rng.random_range(-limit..limit));
            }
        }
        Ok(p)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated on construction")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &[Matrix<T>] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix<T>] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<T>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<T>] {
        &mut self.biases
    }

    pub fn num_params(&self) -> usize {
        self.tensors().map(<[T]>::len).sum()
    }

    /// Parameter tensors in a fixed order: `W_0, b_0, W_1, b_1, ...`.
    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn flat_params(&self) -> Vec<T> {
        self.tensors().flatten().copied().collect()
    }

    pub fn set_flat_params(&mut self, values: &[T]) -> Result<()> {
        ensure_len("flat parameter vector", self.num_params(), values.len())?;
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(all_finite)
    }

    pub fn forward(&self, input: &[T]) -> Result<(Vec<T>, ForwardCache<T>)> {
        ensure_len("mlp input", self.input_dim(), input.len())?;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        let mut pre_activations = Vec::with_capacity(self.num_layers());
        activations.push(input.to_vec());
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let a = &activations[l];
            let pre: Vec<T> = w
                .row_iter()
                .zip(b)
                .map(|(row, &bias)| super::scalar::dot(row, a) + bias)
                .collect();
            let post = if l == last {
                pre.clone()
            } else {
                pre.iter().map(|&x| self.activation.apply(x)).collect()
            };
            pre_activations.push(pre);
            activations.push(post);
        }
        let output = activations[self.num_layers()].clone();
        Ok((
            output,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping the cache.
    pub fn predict(&self, input: &[T]) -> Result<Vec<T>> {
        ensure_len("mlp input", self.input_dim(), input.len())?;
        let last = self.num_layers() - 1;
        let mut a = input.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            a = w
                .row_iter()
                .zip(b)
                .map(|(row, &bias)| {
                    let pre = super::scalar::dot(row, &a) + bias;
                    if l == last {
                        pre
                    } else {
                        self.activation.apply(pre)
                    }
                })
                .collect();
        }
        Ok(a)
    }

    fn check_cache(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<()> {
        ensure_len("cache depth", self.num_layers() + 1, cache.activations.len())?;
        ensure_len("cache input", self.input_dim(), cache.input().len())?;
        ensure_len("output gradient", self.output_dim(), output_grad.len())
    }

    /// Shared reverse sweep. Adds `scale · ∂(g·out)/∂θ` into `param_grads` when
    /// given and returns `∂(g·out)/∂input`.
    fn backprop(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        mut param_grads: Option<(&mut MlpGradients<T>, T)>,
        want_input: bool,
    ) -> Vec<T> {
        let mut delta = output_grad.to_vec();
        for l in (0..self.num_layers()).rev() {
            let a = &cache.activations[l];
            if let Some((grads, scale)) = param_grads.as_mut() {
                let gw = &mut grads.weights[l];
                for (i, &d) in delta.iter().enumerate() {
                    let sd = *scale * d;
                    if sd == T::zero() {
                        continue;
                    }
                    for (g, &x) in gw.row_mut(i).iter_mut().zip(a) {
                        *g += sd * x;
                    }
                }
                for (g, &d) in grads.biases[l].iter_mut().zip(&delta) {
                    *g += *scale * d;
                }
            }
            if l == 0 && !want_input {
                break;
            }
            let mut prev = self.weights[l]
                .matvec_transposed(&delta)
                .expect("shapes validated by check_cache");
            if l > 0 {
                let pre = &cache.pre_activations[l - 1];
                for ((p, &z), &h) in prev.iter_mut().zip(pre).zip(a) {
                    *p *= self.activation.derivative(z, h);
                }
            }
            delta = prev;
        }
        delta
    }

    /// Gradient of `output_grad · output` with respect to every parameter.
    pub fn backward_params(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
    ) -> Result<MlpGradients<T>> {
        self.check_cache(cache, output_grad)?;
        let mut grads = MlpGradients::zeros_like(self);
        self.backprop(cache, output_grad, Some((&mut grads, T::one())), false);
        Ok(grads)
    }

    /// Adds `scale · ∂(output_grad · output)/∂θ` into an existing accumulator.
    pub fn accumulate_param_grads(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        scale: T,
        grads: &mut MlpGradients<T>,
    ) -> Result<()> {
        self.check_cache(cache, output_grad)?;
        grads.check_congruent(self)?;
        self.backprop(cache, output_grad, Some((grads, scale)), false);
        Ok(())
    }

    /// Gradient of `output_grad · output` with respect to the input.
    pub fn backward_input(&self, cache: &ForwardCache<T>, output_grad: &[T]) -> Result<Vec<T>> {
        self.check_cache(cache, output_grad)?;
        Ok(self.backprop(cache, output_grad, None, true))
    }

    /// Parameter gradients accumulated into `grads` plus the input gradient, in one sweep.
    pub fn backward_both(
        &self,
        cache: &ForwardCache<T>,
        output_grad: &[T],
        scale: T,
        grads: &mut MlpGradients<T>,
    ) -> Result<Vec<T>> {
        self.check_cache(cache, output_grad)?;
        grads.check_congruent(self)?;
        Ok(self.backprop(cache, output_grad, Some((grads, scale)), true))
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(Matrix::cast).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|x| U::lit(x.as_f64())).collect())
                .collect(),
            activation: self.activation,
        }
    }
}

/// Gradient buffers shape-congruent to an [`MlpParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct MlpGradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Real> MlpGradients<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            weights: params
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: params.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    pub fn check_congruent(&self, params: &MlpParams<T>) -> Result<()> {
        ensure_len("gradient layers", params.weights.len(), self.weights.len())?;
        for (g, w) in self.weights.iter().zip(&params.weights) {
            ensure_len("gradient weight rows", w.rows(), g.rows())?;
            ensure_len("gradient weight cols", w.cols(), g.cols())?;
        }
        for (g, b) in self.biases.iter().zip(&params.biases) {
            ensure_len("gradient bias", b.len(), g.len())?;
        }
        Ok(())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().flatten().copied().collect()
    }

    pub fn scale(&mut self, s: T) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|x| *x *= s);
        }
    }

    /// `self += s · other`; shapes must agree.
    pub fn add_scaled(&mut self, s: T, other: &Self) {
        for (a, b) in self.tensors_mut().zip(other.tensors()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().all(all_finite)
    }

    pub fn max_abs(&self) -> T {
        self.tensors()
            .flatten()
            .fold(T::zero(), |m, x| m.max(x.abs()))
    }
}
