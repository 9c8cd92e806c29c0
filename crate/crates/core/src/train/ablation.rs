//! Reference variants: a jointly trained amortized VAE, and a KL-fitted
//! encoder on top of the particle-trained decoder.

use super::bundle::{EncoderHead, ModelBundle};
use super::config::{MatchingMode, TrainConfig};
use super::generative::InferencePairSet;
use super::inference::standard_normal_draws;
use super::{minibatches, BestTracker, EpochLog, Stage, StageOutcome};
use crate::data::TabularDataset;
use crate::error::{ensure_len, Error, Result};
use crate::numcore::{adam_step, AdamState, Matrix, MlpGradients};

/// Smallest variance used when moment-matching a particle set.
const VARIANCE_FLOOR: f64 = 1e-6;

fn require_gaussian_head(bundle: &ModelBundle) -> Result<()> {
    if bundle.head == EncoderHead::Gaussian {
        Ok(())
    } else {
        Err(Error::InvalidConfig("this objective needs a Gaussian encoder head".into()))
    }
}

/// Per-coordinate mean and (population, floored) variance of the particles.
pub fn moment_match(particles: &Matrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let mean = particles.column_means();
    let n = particles.rows() as f64;
    let var = (0..particles.cols())
        .map(|k| {
            let v = particles.row_iter().map(|r| (r[k] - mean[k]).powi(2)).sum::<f64>() / n;
            v.max(VARIANCE_FLOOR)
        })
        .collect();
    (mean, var)
}

/// Adds the reparameterization chain `z = μ + exp(½ lv) ε` for a latent
/// gradient `dz` into the encoder output gradient `[dμ; d lv]`.
fn reparam_backward(dz: &[f64], eps: &[f64], std: &[f64], weight: f64, out: &mut [f64]) {
    let d = dz.len();
    for k in 0..d {
        out[k] += weight * dz[k];
        out[d + k] += weight * dz[k] * eps[k] * 0.5 * std[k];
    }
}

/// Joint training of encoder and decoder on the negative ELBO with a
/// standard normal prior, `ℓ` reparameterized draws per sample, for
/// `epochs_generative + epochs_inference` epochs.
pub fn train_vae(
    bundle: &ModelBundle,
    train: &TabularDataset,
    valid: &TabularDataset,
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    require_gaussian_head(bundle)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("training rows"));
    }
    let d = bundle.latent_dim;
    let l = cfg.particles;
    let mut current = bundle.clone();
    let mut enc_adam = AdamState::new(&current.encoder, cfg.encoder_lr);
    let mut dec_adam = AdamState::new(&current.decoder, cfg.decoder_lr);
    let mut best = BestTracker::new(&current, valid)?;
    let log_norm = 0.5 * (train.n_features() + 1) as f64 * (2.0 * std::f64::consts::PI * cfg.noise_var).ln();
    let epochs = cfg.epochs_generative + cfg.epochs_inference;
    let mut logs = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let mut epoch_loss = 0.0;
        for batch in minibatches(train.len(), cfg.batch_size, cfg.seed, "vae-batches", epoch) {
            let scale = 1.0 / batch.len() as f64;
            let mut enc_grads = MlpGradients::zeros_like(&current.encoder);
            let mut dec_grads = MlpGradients::zeros_like(&current.decoder);
            for &m in &batch {
                let (x, y) = train.row(m);
                let mut target = x.to_vec();
                target.push(y);
                let (out, enc_cache) = current.encoder.forward(x)?;
                let (mean, log_var) = out.split_at(d);
                let std: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
                let mut out_grad = vec![0.0; 2 * d];
                let mut rng = crate::rng::stream(cfg.seed, "vae-noise", ((epoch as u64) << 32) | m as u64);
                let noise = standard_normal_draws(&mut rng, l, d);
                let mut nll = 0.0;
                for eps in noise.row_iter() {
                    let z: Vec<f64> = (0..d).map(|k| mean[k] + std[k] * eps[k]).collect();
                    let (pred, dec_cache) = current.decoder.forward(&z)?;
                    let residual: Vec<f64> = pred.iter().zip(&target).map(|(p, t)| (p - t) / cfg.noise_var).collect();
                    nll += 0.5 * pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / cfg.noise_var
                        + log_norm;
                    let dz = current
                        .decoder
                        .backward_both(&dec_cache, &residual, scale / l as f64, &mut dec_grads)?;
                    reparam_backward(&dz, eps, &std, 1.0 / l as f64, &mut out_grad);
                }
                let mut kl = 0.0;
                for k in 0..d {
                    let var = log_var[k].exp();
                    kl += 0.5 * (mean[k] * mean[k] + var - 1.0 - log_var[k]);
                    out_grad[k] += mean[k];
                    out_grad[d + k] += 0.5 * (var - 1.0);
                }
                current.encoder.accumulate_param_grads(&enc_cache, &out_grad, scale, &mut enc_grads)?;
                epoch_loss += nll / l as f64 + kl;
            }
            adam_step(&mut current.encoder, &enc_grads, &mut enc_adam)
                .map_err(Error::during(format!("vae epoch {epoch}")))?;
            adam_step(&mut current.decoder, &dec_grads, &mut dec_adam)
                .map_err(Error::during(format!("vae epoch {epoch}")))?;
        }
        let sse = best.offer(&current, valid, epoch)?;
        logs.push(EpochLog {
            epoch,
            stage: Stage::Vae,
            loss: epoch_loss / train.len() as f64,
            valid_sse: Some(sse),
        });
    }
    Ok(best.finish(current, logs))
}

/// Encoder fitted with the decoder frozen, minimizing
/// `−E_q[log p(y | z)] + KL[q(z | x) ‖ Q̂]` where `Q̂` is a diagonal Gaussian
/// moment-matched to the sample's stored particles.
pub fn train_encoder_kl(
    bundle: &ModelBundle,
    pairs: &InferencePairSet,
    train: &TabularDataset,
    valid: &TabularDataset,
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    require_gaussian_head(bundle)?;
    if pairs.mode != MatchingMode::PerSampleSet {
        return Err(Error::InvalidConfig("KL fitting needs the full particle sets".into()));
    }
    ensure_len("particle sets vs training rows", train.len(), pairs.len())?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("inference pairs"));
    }
    let d = bundle.latent_dim;
    let l = cfg.particles;
    let targets: Vec<(Vec<f64>, Vec<f64>)> = pairs.latents.iter().map(moment_match).collect();
    let out_dim = bundle.decoder.output_dim();
    let mut current = bundle.clone();
    let mut adam = AdamState::new(&current.encoder, cfg.encoder_lr);
    let mut best = BestTracker::new(&current, valid)?;
    let log_norm = 0.5 * (2.0 * std::f64::consts::PI * cfg.noise_var).ln();
    let mut logs = Vec::with_capacity(cfg.epochs_inference);
    for epoch in 1..=cfg.epochs_inference {
        let mut epoch_loss = 0.0;
        for batch in minibatches(train.len(), cfg.batch_size, cfg.seed, "encoder-kl-batches", epoch) {
            let scale = 1.0 / batch.len() as f64;
            let mut grads = MlpGradients::zeros_like(&current.encoder);
            for &m in &batch {
                let (x, y) = train.row(m);
                let (q_mean, q_var) = &targets[m];
                let (out, cache) = current.encoder.forward(x)?;
                let (mean, log_var) = out.split_at(d);
                let std: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
                let mut out_grad = vec![0.0; 2 * d];
                let mut rng = crate::rng::stream(cfg.seed, "encoder-kl-noise", ((epoch as u64) << 32) | m as u64);
                let noise = standard_normal_draws(&mut rng, l, d);
                let mut nll = 0.0;
                for eps in noise.row_iter() {
                    let z: Vec<f64> = (0..d).map(|k| mean[k] + std[k] * eps[k]).collect();
                    let (pred, dec_cache) = current.decoder.forward(&z)?;
                    let r = pred[out_dim - 1] - y;
                    nll += 0.5 * r * r / cfg.noise_var + log_norm;
                    let mut og = vec![0.0; out_dim];
                    og[out_dim - 1] = r / cfg.noise_var;
                    let dz = current.decoder.backward_input(&dec_cache, &og)?;
                    reparam_backward(&dz, eps, &std, 1.0 / l as f64, &mut out_grad);
                }
                let mut kl = 0.0;
                for k in 0..d {
                    let var = log_var[k].exp();
                    let diff = mean[k] - q_mean[k];
                    kl += 0.5 * (q_var[k].ln() - log_var[k] + (var + diff * diff) / q_var[k] - 1.0);
                    out_grad[k] += diff / q_var[k];
                    out_grad[d + k] += 0.5 * (var / q_var[k] - 1.0);
                }
                current.encoder.accumulate_param_grads(&cache, &out_grad, scale, &mut grads)?;
                epoch_loss += nll / l as f64 + kl;
            }
            adam_step(&mut current.encoder, &grads, &mut adam)
                .map_err(Error::during(format!("encoder KL epoch {epoch}")))?;
        }
        let sse = best.offer(&current, valid, epoch)?;
        logs.push(EpochLog {
            epoch,
            stage: Stage::EncoderKl,
            loss: epoch_loss / train.len() as f64,
            valid_sse: Some(sse),
        });
    }
    Ok(best.finish(current, logs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_toy_regression, Standardizer};
    use crate::train::config::Ablation;

    #[test]
    fn moment_match_values() {
        let p = Matrix::from_rows(&[[1.0, 2.0], [3.0, 2.0]]).unwrap();
        let (m, v) = moment_match(&p);
        assert_eq!(m, vec![2.0, 2.0]);
        assert_eq!(v, vec![1.0, VARIANCE_FLOOR]);
    }

    fn setup(ablation: Ablation) -> (TrainConfig, ModelBundle, TabularDataset) {
        let cfg = TrainConfig {
            ablation,
            batch_size: 16,
            epochs_generative: 1,
            epochs_inference: 1,
            particles: 3,
            kprox_steps: 5,
            latent_dim: 2,
            hidden: vec![4],
            ..TrainConfig::default()
        };
        let raw = make_toy_regression(2, 30).unwrap();
        let ds = Standardizer::fit(&raw).unwrap().apply(&raw).unwrap();
        let b = ModelBundle::init(&cfg, ds.n_features(), Standardizer::identity(ds.n_features())).unwrap();
        (cfg, b, ds)
    }

    #[test]
    fn vae_zero_lr_keeps_parameters() {
        let (mut cfg, b, ds) = setup(Ablation::NoKprox);
        cfg.encoder_lr = 0.0;
        cfg.decoder_lr = 0.0;
        let out = train_vae(&b, &ds, &ds, &cfg).unwrap();
        assert_eq!(out.best, b);
        assert_eq!(out.logs.len(), 2);
        assert!(out.logs.iter().all(|l| l.loss.is_finite()));
    }

    #[test]
    fn vae_rejects_deterministic_head() {
        let (mut cfg, _, ds) = setup(Ablation::Full);
        cfg.matching_mode = MatchingMode::BatchMean;
        let b = ModelBundle::init(&cfg, ds.n_features(), Standardizer::identity(ds.n_features())).unwrap();
        assert!(train_vae(&b, &ds, &ds, &cfg).is_err());
    }

    #[test]
    fn vae_encoder_gradient_matches_finite_difference() {
        // one sample, one draw: loss(θ_enc) for fixed noise
        let (cfg, b, ds) = setup(Ablation::NoKprox);
        let (x, y) = ds.row(0);
        let mut target = x.to_vec();
        target.push(y);
        let d = b.latent_dim;
        let eps = [0.3, -1.1];
        let loss = |enc: &crate::numcore::MlpParams<f64>| {
            let out = enc.predict(x).unwrap();
            let z: Vec<f64> = (0..d).map(|k| out[k] + (0.5 * out[d + k]).exp() * eps[k]).collect();
            let pred = b.decoder.predict(&z).unwrap();
            let nll = 0.5 * pred.iter().zip(&target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / cfg.noise_var;
            let kl: f64 = (0..d).map(|k| 0.5 * (out[k] * out[k] + out[d + k].exp() - 1.0 - out[d + k])).sum();
            nll + kl
        };
        let (out, cache) = b.encoder.forward(x).unwrap();
        let std: Vec<f64> = out[d..].iter().map(|lv| (0.5 * lv).exp()).collect();
        let z: Vec<f64> = (0..d).map(|k| out[k] + std[k] * eps[k]).collect();
        let (pred, dcache) = b.decoder.forward(&z).unwrap();
        let residual: Vec<f64> = pred.iter().zip(&target).map(|(p, t)| (p - t) / cfg.noise_var).collect();
        let dz = b.decoder.backward_input(&dcache, &residual).unwrap();
        let mut og = vec![0.0; 2 * d];
        reparam_backward(&dz, &eps, &std, 1.0, &mut og);
        for k in 0..d {
            og[k] += out[k];
            og[d + k] += 0.5 * (out[d + k].exp() - 1.0);
        }
        let analytic = b.encoder.backward_params(&cache, &og).unwrap().flatten();
        let flat = b.encoder.flat_params();
        let numeric = crate::numcore::gradcheck::central_difference(
            |p| {
                let mut e = b.encoder.clone();
                e.set_flat_params(p).unwrap();
                loss(&e)
            },
            &flat,
            1e-5,
        );
        let err = crate::numcore::gradcheck::max_relative_error(&analytic, &numeric);
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn kl_stage_runs_and_freezes_decoder() {
        let (cfg, b, ds) = setup(Ablation::NoWass);
        let cache = crate::train::LatentCache::new(0);
        let pairs = crate::train::build_inference_pairs(&b, &ds, &cfg, &cache, MatchingMode::PerSampleSet).unwrap();
        let out = train_encoder_kl(&b, &pairs, &ds, &ds, &cfg).unwrap();
        assert_eq!(out.best.decoder, b.decoder);
        assert!(out.logs[0].loss.is_finite());
    }
}
