//! Decoder training on particle-inferred latents, and the latent targets the
//! encoder is later fitted to.

use rayon::prelude::*;

use super::bundle::ModelBundle;
use super::config::{MatchingMode, TrainConfig};
use super::{minibatches, EpochLog, Stage};
use crate::data::TabularDataset;
use crate::error::{Error, Result};
use crate::numcore::{adam_step, AdamState, Matrix, MlpGradients, MlpParams};
use crate::sampler::{init_ensemble_with, kprox_final, InitSpec, ParticleEnsemble};
use crate::score::DecoderPosterior;

/// Per-sample particle ensembles carried across epochs.
#[derive(Debug, Clone, Default)]
pub struct LatentCache {
    ensembles: Vec<Option<ParticleEnsemble<f64>>>,
}

impl LatentCache {
    pub fn new(n: usize) -> Self {
        Self {
            ensembles: vec![None; n],
        }
    }

    pub fn len(&self) -> usize {
        self.ensembles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ensembles.is_empty()
    }

    pub fn get(&self, m: usize) -> Option<&ParticleEnsemble<f64>> {
        self.ensembles.get(m).and_then(Option::as_ref)
    }
}

fn prior_particles(cfg: &TrainConfig, sample: usize) -> Result<ParticleEnsemble<f64>> {
    let spec = InitSpec::standard_normal(cfg.latent_dim, cfg.particles);
    init_ensemble_with(&spec, &mut crate::rng::stream(cfg.seed, "latent-init", sample as u64))
}

fn starting_particles(cfg: &TrainConfig, cache: &LatentCache, m: usize) -> Result<ParticleEnsemble<f64>> {
    match cache.get(m) {
        Some(e) if cfg.warm_start => Ok(e.clone()),
        _ => prior_particles(cfg, m),
    }
}

/// Runs the sampler on the posterior of sample `(x, y)` under `decoder`.
pub fn infer_latents(
    decoder: &MlpParams<f64>,
    x: &[f64],
    y: f64,
    init: ParticleEnsemble<f64>,
    cfg: &TrainConfig,
) -> Result<ParticleEnsemble<f64>> {
    let posterior = DecoderPosterior::new(decoder, x, y, cfg.noise_var)?;
    kprox_final(init, &posterior, &cfg.kprox())
}

/// Gaussian negative log-likelihood of `target` averaged over particles;
/// its parameter gradient, times `scale`, is added to `grads`.
pub fn particle_nll(
    decoder: &MlpParams<f64>,
    target: &[f64],
    particles: &Matrix<f64>,
    noise_var: f64,
    scale: f64,
    grads: &mut MlpGradients<f64>,
) -> Result<f64> {
    let l = particles.rows() as f64;
    let log_norm = 0.5 * target.len() as f64 * (2.0 * std::f64::consts::PI * noise_var).ln();
    let mut total = 0.0;
    for z in particles.row_iter() {
        let (out, cache) = decoder.forward(z)?;
        let residual: Vec<f64> = out.iter().zip(target).map(|(o, t)| (o - t) / noise_var).collect();
        let sq: f64 = out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum();
        total += 0.5 * sq / noise_var + log_norm;
        decoder.accumulate_param_grads(&cache, &residual, scale / l, grads)?;
    }
    Ok(total / l)
}

fn observation(x: &[f64], y: f64) -> Vec<f64> {
    let mut t = x.to_vec();
    t.push(y);
    t
}

struct SampleStep {
    ensemble: ParticleEnsemble<f64>,
    grads: MlpGradients<f64>,
    nll: f64,
}

/// Stage 1: alternate particle inference under the current decoder with one
/// Adam step per minibatch on the mean negative log-likelihood. The logged
/// loss of an epoch is the mean per-sample value seen during that epoch.
pub fn train_decoder_stage(
    bundle: &mut ModelBundle,
    train: &TabularDataset,
    cfg: &TrainConfig,
    cache: &mut LatentCache,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("decoder training rows"));
    }
    if cache.len() != train.len() {
        *cache = LatentCache::new(train.len());
    }
    let mut adam = AdamState::new(&bundle.decoder, cfg.decoder_lr);
    let mut logs = Vec::with_capacity(cfg.epochs_generative);
    for epoch in 1..=cfg.epochs_generative {
        let mut epoch_nll = 0.0;
        for batch in minibatches(train.len(), cfg.batch_size, cfg.seed, "decoder-batches", epoch) {
            let decoder = &bundle.decoder;
            let scale = 1.0 / batch.len() as f64;
            let steps: Vec<Result<SampleStep>> = batch
                .par_iter()
                .map(|&m| {
                    let (x, y) = train.row(m);
                    let init = starting_particles(cfg, cache, m)?;
                    let ensemble = infer_latents(decoder, x, y, init, cfg)
                        .map_err(Error::during(format!("decoder stage epoch {epoch}, sample {m}")))?;
                    let mut grads = MlpGradients::zeros_like(decoder);
                    let nll = particle_nll(
                        decoder,
                        &observation(x, y),
                        ensemble.particles(),
                        cfg.noise_var,
                        scale,
                        &mut grads,
                    )?;
                    Ok(SampleStep { ensemble, grads, nll })
                })
                .collect();
            let mut total = MlpGradients::zeros_like(&bundle.decoder);
            for (&m, step) in batch.iter().zip(steps) {
                let step = step?;
                total.add_scaled(1.0, &step.grads);
                epoch_nll += step.nll;
                cache.ensembles[m] = Some(step.ensemble);
            }
            adam_step(&mut bundle.decoder, &total, &mut adam)
                .map_err(Error::during(format!("decoder stage epoch {epoch}")))?;
        }
        logs.push(EpochLog {
            epoch,
            stage: Stage::Decoder,
            loss: epoch_nll / train.len() as f64,
            valid_sse: None,
        });
    }
    Ok(logs)
}

/// Latent targets for the encoder, one entry per training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct InferencePairSet {
    pub mode: MatchingMode,
    pub x: Matrix<f64>,
    /// `1 × D` particle means in batch-mean mode, `ℓ × D` particles otherwise.
    pub latents: Vec<Matrix<f64>>,
}

impl InferencePairSet {
    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.first().map_or(0, Matrix::cols)
    }
}

/// Runs the sampler once more under the trained decoder (warm-started from
/// the cache when available) and stores each sample's latent summary.
pub fn build_inference_pairs(
    bundle: &ModelBundle,
    train: &TabularDataset,
    cfg: &TrainConfig,
    cache: &LatentCache,
    mode: MatchingMode,
) -> Result<InferencePairSet> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyInput("inference pair rows"));
    }
    let cache_fits = cache.len() == train.len();
    let latents: Vec<Result<Matrix<f64>>> = (0..train.len())
        .into_par_iter()
        .map(|m| {
            let (x, y) = train.row(m);
            let init = if cache_fits {
                starting_particles(cfg, cache, m)?
            } else {
                prior_particles(cfg, m)?
            };
            let ensemble = infer_latents(&bundle.decoder, x, y, init, cfg)
                .map_err(Error::during(format!("latent inference for sample {m}")))?;
            Ok(match mode {
                MatchingMode::BatchMean => Matrix::from_vec(1, cfg.latent_dim, ensemble.mean())?,
                MatchingMode::PerSampleSet => ensemble.into_particles(),
            })
        })
        .collect();
    Ok(InferencePairSet {
        mode,
        x: train.x().clone(),
        latents: latents.into_iter().collect::<Result<_>>()?,
    })
}
