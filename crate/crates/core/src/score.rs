//! Score functions `∇_z log p(z)` of unnormalized target densities.

use crate::error::{ensure_len, Error, Result};
use crate::numcore::{MlpParams, Real};

/// Something the sampler can pull particles toward.
pub trait ScoreModel<T: Real>: Sync {
    fn dim(&self) -> usize;

    fn score(&self, z: &[T]) -> Result<Vec<T>>;

    /// Log density up to an additive constant.
    fn log_density(&self, z: &[T]) -> Result<T>;
}

impl<T: Real, S: ScoreModel<T> + ?Sized> ScoreModel<T> for &S {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn score(&self, z: &[T]) -> Result<Vec<T>> {
        (**self).score(z)
    }

    fn log_density(&self, z: &[T]) -> Result<T> {
        (**self).log_density(z)
    }
}

/// `(mean - z) / var`, elementwise.
pub fn gaussian_score<T: Real>(z: &[T], mean: &[T], var: &[T]) -> Result<Vec<T>> {
    ensure_len("gaussian mean", z.len(), mean.len())?;
    ensure_len("gaussian variance", z.len(), var.len())?;
    Ok(z.iter()
        .zip(mean)
        .zip(var)
        .map(|((&z, &m), &v)| (m - z) / v)
        .collect())
}

/// Diagonal Gaussian target.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T> {
    mean: Vec<T>,
    var: Vec<T>,
}

impl<T: Real> Gaussian<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        ensure_len("gaussian variance", mean.len(), var.len())?;
        if var.iter().any(|&v| !(v > T::zero())) {
            return Err(Error::InvalidConfig("gaussian variances must be positive".into()));
        }
        Ok(Self { mean, var })
    }

    pub fn isotropic(mean: Vec<T>, var: T) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, vec![var; n])
    }
}

impl<T: Real> ScoreModel<T> for Gaussian<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn score(&self, z: &[T]) -> Result<Vec<T>> {
        gaussian_score(z, &self.mean, &self.var)
    }

    fn log_density(&self, z: &[T]) -> Result<T> {
        ensure_len("gaussian point", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(&self.mean)
            .zip(&self.var)
            .map(|((&z, &m), &v)| -(z - m) * (z - m) / (v + v))
            .sum())
    }
}

/// `N(0, I)` in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandardNormalPrior {
    pub dim: usize,
}

impl<T: Real> ScoreModel<T> for StandardNormalPrior {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, z: &[T]) -> Result<Vec<T>> {
        ensure_len("prior point", self.dim, z.len())?;
        Ok(z.iter().map(|&x| -x).collect())
    }

    fn log_density(&self, z: &[T]) -> Result<T> {
        ensure_len("prior point", self.dim, z.len())?;
        Ok(z.iter().map(|&x| -x * x / T::lit(2.0)).sum())
    }
}

/// Improper flat target: zero score everywhere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlatTarget {
    pub dim: usize,
}

impl<T: Real> ScoreModel<T> for FlatTarget {
    fn dim(&self) -> usize {
        self.dim
    }

    fn score(&self, z: &[T]) -> Result<Vec<T>> {
        ensure_len("flat target point", self.dim, z.len())?;
        Ok(vec![T::zero(); self.dim])
    }

    fn log_density(&self, z: &[T]) -> Result<T> {
        ensure_len("flat target point", self.dim, z.len())?;
        Ok(T::zero())
    }
}

/// One-dimensional Gaussian mixture `Σ_k w_k N(m_k, s_k²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture1D<T> {
    weights: Vec<T>,
    means: Vec<T>,
    stds: Vec<T>,
}

impl<T: Real> GaussianMixture1D<T> {
    pub fn new(weights: Vec<T>, means: Vec<T>, stds: Vec<T>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput("mixture components"));
        }
        ensure_len("mixture means", weights.len(), means.len())?;
        ensure_len("mixture stds", weights.len(), stds.len())?;
        let total: T = weights.iter().copied().sum();
        if weights.iter().any(|&w| !(w > T::zero())) || (total - T::one()).abs() > T::lit(1e-9) {
            return Err(Error::InvalidConfig(
                "mixture weights must be positive and sum to 1".into(),
            ));
        }
        if stds.iter().any(|&s| !(s > T::zero())) {
            return Err(Error::InvalidConfig("mixture stds must be positive".into()));
        }
        Ok(Self { weights, means, stds })
    }

    /// Equal-weight mixture of two components at `±offset` with a shared std.
    pub fn symmetric_bimodal(offset: T, std: T) -> Result<Self> {
        let half = T::lit(0.5);
        Self::new(vec![half, half], vec![-offset, offset], vec![std, std])
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn means(&self) -> &[T] {
        &self.means
    }

    pub fn stds(&self) -> &[T] {
        &self.stds
    }

    fn component_logs(&self, z: T) -> impl Iterator<Item = T> + '_ {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.stds)
            .map(move |((&w, &m), &s)| {
                let u = (z - m) / s;
                w.ln() - s.ln() - u * u / T::lit(2.0)
            })
    }

    /// Normalized log density.
    pub fn log_pdf(&self, z: T) -> T {
        let logs: Vec<T> = self.component_logs(z).collect();
        let max = logs.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
        let sum: T = logs.iter().map(|&l| (l - max).exp()).sum();
        max + sum.ln() - T::lit(0.5 * (2.0 * std::f64::consts::PI).ln())
    }

    pub fn score_at(&self, z: T) -> T {
        gmm1d_score(z, &self.weights, &self.means, &self.stds)
    }

    /// Draws samples by picking a component and then a normal deviate.
    pub fn sample<R: rand::Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<T> {
        use rand_distr::{Distribution, StandardNormal};
        let w: Vec<f64> = self.weights.iter().map(|w| w.as_f64()).collect();
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = w.len() - 1;
                for (i, wi) in w.iter().enumerate() {
                    acc += wi;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let e: f64 = StandardNormal.sample(rng);
                self.means[k] + self.stds[k] * T::lit(e)
            })
            .collect()
    }
}

/// `d/dz log Σ_k w_k N(z; m_k, s_k²)` via responsibilities computed with log-sum-exp.
pub fn gmm1d_score<T: Real>(z: T, weights: &[T], means: &[T], stds: &[T]) -> T {
    let logs: Vec<T> = weights
        .iter()
        .zip(means)
        .zip(stds)
        .map(|((&w, &m), &s)| {
            let u = (z - m) / s;
            w.ln() - s.ln() - u * u / T::lit(2.0)
        })
        .collect();
    let max = logs.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut num = T::zero();
    let mut den = T::zero();
    for ((&l, &m), &s) in logs.iter().zip(means).zip(stds) {
        let r = (l - max).exp();
        num += r * (m - z) / (s * s);
        den += r;
    }
    num / den
}

impl<T: Real> ScoreModel<T> for GaussianMixture1D<T> {
    fn dim(&self) -> usize {
        1
    }

    fn score(&self, z: &[T]) -> Result<Vec<T>> {
        ensure_len("mixture point", 1, z.len())?;
        Ok(vec![self.score_at(z[0])])
    }

    fn log_density(&self, z: &[T]) -> Result<T> {
        ensure_len("mixture point", 1, z.len())?;
        Ok(self.log_pdf(z[0]))
    }
}

/// Posterior over the latent given one observation under a Gaussian decoder:
/// `log p(z | x, y) = -‖[x; y] - g(z)‖² / (2σ²) - ‖z‖² / 2 + const`.
#[derive(Debug, Clone)]
pub struct DecoderPosterior<'a, T> {
    decoder: &'a MlpParams<T>,
    target: Vec<T>,
    noise_var: T,
}

impl<'a, T: Real> DecoderPosterior<'a, T> {
    /// `x` is the input vector and `y` the label; the decoder must emit `dim(x) + 1` values.
    pub fn new(decoder: &'a MlpParams<T>, x: &[T], y: T, noise_var: T) -> Result<Self> {
        let mut target = Vec::with_capacity(x.len() + 1);
        target.extend_from_slice(x);
        target.push(y);
        Self::from_target(decoder, target, noise_var)
    }

    pub fn from_target(decoder: &'a MlpParams<T>, target: Vec<T>, noise_var: T) -> Result<Self> {
        ensure_len("decoder output vs observation", decoder.output_dim(), target.len())?;
        if !(noise_var > T::zero()) {
            return Err(Error::InvalidConfig("noise variance must be positive".into()));
        }
        Ok(Self {
            decoder,
            target,
            noise_var,
        })
    }

    pub fn target(&self) -> &[T] {
        &self.target
    }

    pub fn noise_var(&self) -> T {
        self.noise_var
    }

    /// `log p([x; y] | z)` up to a constant.
    pub fn log_likelihood(&self, z: &[T]) -> Result<T> {
        let out = self.decoder.predict(z)?;
        Ok(-crate::numcore::scalar::squared_distance(&out, &self.target)
            / (T::lit(2.0) * self.noise_var))
    }
}

/// `Jᵀ([x; y] - g(z)) / σ² - z`.
pub fn decoder_posterior_score<T: Real>(model: &DecoderPosterior<'_, T>, z: &[T]) -> Result<Vec<T>> {
    let (out, cache) = model.decoder.forward(z)?;
    let residual: Vec<T> = model
        .target
        .iter()
        .zip(&out)
        .map(|(&t, &o)| (t - o) / model.noise_var)
        .collect();
    let mut g = model.decoder.backward_input(&cache, &residual)?;
    for (gi, &zi) in g.iter_mut().zip(z) {
        *gi -= zi;
    }
    Ok(g)
}

impl<T: Real> ScoreModel<T> for DecoderPosterior<'_, T> {
    fn dim(&self) -> usize {
        self.decoder.input_dim()
    }

    fn score(&self, z: &[T]) -> Result<Vec<T>> {
        decoder_posterior_score(self, z)
    }

    fn log_density(&self, z: &[T]) -> Result<T> {
        let prior: T = z.iter().map(|&x| -x * x / T::lit(2.0)).sum();
        Ok(self.log_likelihood(z)? + prior)
    }
}
