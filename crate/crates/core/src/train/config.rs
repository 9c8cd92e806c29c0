use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::KernelConfig;
use crate::numcore::Activation;
use crate::ot::SinkhornConfig;
use crate::sampler::KproxConfig;

/// How encoder outputs are compared with inferred latents in stage 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchingMode {
    /// One latent (the particle mean) per sample, transported within each
    /// minibatch.
    BatchMean,
    /// Gaussian encoder head; `ℓ` reparameterized draws per sample are
    /// transported onto that sample's `ℓ` particles.
    #[default]
    PerSampleSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Amortized VAE trained jointly, no particle inference.
    NoKprox,
    /// Particle-trained decoder, encoder fitted by a KL objective instead of
    /// transport.
    NoWass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub epochs_generative: usize,
    pub epochs_inference: usize,
    pub particles: usize,
    pub kprox_epsilon: f64,
    pub kprox_steps: usize,
    pub sinkhorn_epsilon: f64,
    pub latent_dim: usize,
    /// Encoder hidden widths; the decoder uses them reversed.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Observation noise variance of the decoder likelihood.
    pub noise_var: f64,
    pub kernel: KernelConfig<f64>,
    pub sinkhorn_max_iters: usize,
    /// Largest marginal violation accepted from a plan that did not reach
    /// the solver tolerance within its iteration budget.
    pub sinkhorn_accept_tol: f64,
    /// Reuse each sample's particles from the previous epoch.
    pub warm_start: bool,
    pub matching_mode: MatchingMode,
    pub ablation: Ablation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            encoder_lr: 0.01,
            decoder_lr: 0.01,
            epochs_generative: 200,
            epochs_inference: 200,
            particles: 10,
            kprox_epsilon: 0.1,
            kprox_steps: 200,
            sinkhorn_epsilon: 0.05,
            latent_dim: 5,
            hidden: vec![10, 7, 5],
            activation: Activation::Tanh,
            noise_var: 1.0,
            kernel: KernelConfig::default(),
            sinkhorn_max_iters: 1000,
            sinkhorn_accept_tol: 1e-4,
            warm_start: true,
            matching_mode: MatchingMode::PerSampleSet,
            ablation: Ablation::Full,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// `paper`: 200/200 epochs and 200 sampler steps. `desk`: 50/50 epochs
    /// and 100 steps. `smoke`: a few seconds on small synthetic data.
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self::default();
        match name {
            "paper" => Ok(base),
            "desk" => Ok(Self {
                epochs_generative: 50,
                epochs_inference: 50,
                kprox_steps: 100,
                ..base
            }),
            "smoke" => Ok(Self {
                batch_size: 64,
                epochs_generative: 8,
                epochs_inference: 20,
                particles: 5,
                kprox_steps: 50,
                ..base
            }),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset `{other}` (expected paper, desk or smoke)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("particles", self.particles),
            ("kprox_steps", self.kprox_steps),
            ("latent_dim", self.latent_dim),
            ("sinkhorn_max_iters", self.sinkhorn_max_iters),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        let rates = [("encoder_lr", self.encoder_lr), ("decoder_lr", self.decoder_lr)];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        let strictly = [
            ("kprox_epsilon", self.kprox_epsilon),
            ("sinkhorn_epsilon", self.sinkhorn_epsilon),
            ("noise_var", self.noise_var),
            ("sinkhorn_accept_tol", self.sinkhorn_accept_tol),
        ];
        for (name, v) in strictly {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be positive".into()));
        }
        self.kernel.validate()
    }

    /// Overrides one field from text. See [`override_field`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        override_field(self, key, value)
    }

    /// Applies `key=value` pairs in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for item in overrides {
            let item = item.as_ref();
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let out = match (self.ablation, self.matching_mode) {
            (Ablation::Full, MatchingMode::BatchMean) => self.latent_dim,
            _ => 2 * self.latent_dim,
        };
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden);
        dims.push(out);
        dims
    }

    pub fn decoder_dims(&self, input_dim: usize) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend(self.hidden.iter().rev());
        dims.push(input_dim + 1);
        dims
    }

    pub fn kprox(&self) -> KproxConfig<f64> {
        KproxConfig {
            epsilon: self.kprox_epsilon,
            steps: self.kprox_steps,
            kernel: self.kernel,
            seed: self.seed,
            ..KproxConfig::default()
        }
    }

    pub fn sinkhorn(&self) -> SinkhornConfig<f64> {
        SinkhornConfig {
            entropic_eps: self.sinkhorn_epsilon,
            max_iters: self.sinkhorn_max_iters,
            ..SinkhornConfig::default()
        }
    }
}

/// Overrides one field of any serde-serializable struct. `key` may name a
/// nested field with dots (`kernel.bandwidth`). The value is read as JSON
/// when it parses, otherwise as a plain string.
pub fn override_field<C: Serialize + DeserializeOwned>(target: &mut C, key: &str, value: &str) -> Result<()> {
    let mut doc = serde_json::to_value(&*target)?;
    let pointer: String = key.split('.').map(|p| format!("/{p}")).collect();
    let slot = doc
        .pointer_mut(&pointer)
        .ok_or_else(|| Error::InvalidConfig(format!("unknown config key `{key}`")))?;
    *slot = serde_json::from_str(value).unwrap_or_else(|_| serde_json::Value::String(value.to_string()));
    *target = serde_json::from_value(doc)
        .map_err(|e| Error::InvalidConfig(format!("bad value `{value}` for `{key}`: {e}")))?;
    Ok(())
}
