//! Stage 2: fitting the encoder to inferred latents by entropic transport,
//! with gradients taken from the optimal plan.

use rand_distr::{Distribution, StandardNormal};

use super::bundle::{EncoderHead, ModelBundle};
use super::config::{MatchingMode, TrainConfig};
use super::generative::InferencePairSet;
use super::{minibatches, BestTracker, EpochLog, Stage, StageOutcome};
use crate::data::TabularDataset;
use crate::error::{ensure_len, Error, Result};
use crate::numcore::{adam_step, AdamState, Matrix, MlpGradients};
use crate::ot::{cost_matrix, envelope_grad_predictions, ot_cost, sinkhorn, SinkhornConfig, TransportPlan};

/// Sinkhorn with the training acceptance rule: a plan short of the solver
/// tolerance is kept if its marginals are within `sinkhorn_accept_tol`;
/// otherwise the solve is repeated in the log domain with ten times the
/// iteration budget, then rejected.
pub fn transport_plan(
    targets: &Matrix<f64>,
    predictions: &Matrix<f64>,
    cfg: &TrainConfig,
) -> Result<(TransportPlan<f64>, Matrix<f64>)> {
    let cost = cost_matrix(targets, predictions)?;
    let base = cfg.sinkhorn();
    let acceptable = |p: &TransportPlan<f64>| p.converged || p.marginal_violation() <= cfg.sinkhorn_accept_tol;
    let plan = sinkhorn(&cost, &base)?;
    if acceptable(&plan) {
        return Ok((plan, cost));
    }
    let retry = sinkhorn(
        &cost,
        &SinkhornConfig {
            stabilized: true,
            max_iters: base.max_iters.saturating_mul(10),
            ..base
        },
    )?;
    if acceptable(&retry) {
        return Ok((retry, cost));
    }
    Err(Error::Sinkhorn(format!(
        "no acceptable plan after {} iterations (marginal violation {:e})",
        retry.iterations_used,
        retry.marginal_violation()
    )))
}

fn noise_stream(cfg: &TrainConfig, epoch: usize, sample: usize) -> crate::rng::StreamRng {
    crate::rng::stream(cfg.seed, "encoder-noise", ((epoch as u64) << 32) | sample as u64)
}

/// `count × dim` standard normal draws.
pub(crate) fn standard_normal_draws(rng: &mut crate::rng::StreamRng, count: usize, dim: usize) -> Matrix<f64> {
    Matrix::from_fn(count, dim, |_, _| StandardNormal.sample(&mut *rng))
}

/// One batch in batch-mean mode: transport between the batch's encoder
/// outputs and its stored latents. Returns `⟨π, C⟩`.
fn batch_mean_step(
    bundle: &ModelBundle,
    pairs: &InferencePairSet,
    batch: &[usize],
    cfg: &TrainConfig,
    grads: &mut MlpGradients<f64>,
) -> Result<f64> {
    let d = bundle.latent_dim;
    let mut preds = Matrix::zeros(batch.len(), d);
    let mut targets = Matrix::zeros(batch.len(), d);
    let mut caches = Vec::with_capacity(batch.len());
    for (j, &m) in batch.iter().enumerate() {
        let (out, cache) = bundle.encoder.forward(pairs.x.row(m))?;
        preds.row_mut(j).copy_from_slice(&out);
        targets.row_mut(j).copy_from_slice(pairs.latents[m].row(0));
        caches.push(cache);
    }
    let (plan, cost) = transport_plan(&targets, &preds, cfg)?;
    let g = envelope_grad_predictions(&plan, &targets, &preds)?;
    for (j, cache) in caches.iter().enumerate() {
        bundle.encoder.accumulate_param_grads(cache, g.row(j), 1.0, grads)?;
    }
    ot_cost(&plan, &cost)
}

/// One sample in per-sample-set mode: `ℓ` reparameterized encoder draws
/// transported onto the sample's `ℓ` particles. Returns `⟨π, C⟩`.
fn sample_set_step(
    bundle: &ModelBundle,
    x: &[f64],
    particles: &Matrix<f64>,
    noise: &Matrix<f64>,
    cfg: &TrainConfig,
    scale: f64,
    grads: &mut MlpGradients<f64>,
) -> Result<f64> {
    let d = bundle.latent_dim;
    let (out, cache) = bundle.encoder.forward(x)?;
    let (mean, log_var) = out.split_at(d);
    let std: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    let preds = Matrix::from_fn(noise.rows(), d, |i, k| mean[k] + std[k] * noise[(i, k)]);
    let (plan, cost) = transport_plan(particles, &preds, cfg)?;
    let g = envelope_grad_predictions(&plan, particles, &preds)?;
    let mut out_grad = vec![0.0; 2 * d];
    for i in 0..noise.rows() {
        for k in 0..d {
            out_grad[k] += g[(i, k)];
            out_grad[d + k] += g[(i, k)] * noise[(i, k)] * 0.5 * std[k];
        }
    }
    bundle.encoder.accumulate_param_grads(&cache, &out_grad, scale, grads)?;
    ot_cost(&plan, &cost)
}

/// Mean transport cost of the current encoder over in-order batches,
/// without updating anything. Per-sample-set mode uses epoch-0 noise.
pub fn transport_loss(bundle: &ModelBundle, pairs: &InferencePairSet, cfg: &TrainConfig) -> Result<f64> {
    let mut scratch = MlpGradients::zeros_like(&bundle.encoder);
    let n = pairs.len();
    let mut total = 0.0;
    match pairs.mode {
        MatchingMode::BatchMean => {
            let idx: Vec<usize> = (0..n).collect();
            let chunks: Vec<&[usize]> = idx.chunks(cfg.batch_size).collect();
            for chunk in &chunks {
                total += batch_mean_step(bundle, pairs, chunk, cfg, &mut scratch)?;
            }
            Ok(total / chunks.len() as f64)
        }
        MatchingMode::PerSampleSet => {
            for m in 0..n {
                let noise = standard_normal_draws(&mut noise_stream(cfg, 0, m), pairs.latents[m].rows(), bundle.latent_dim);
                total += sample_set_step(bundle, pairs.x.row(m), &pairs.latents[m], &noise, cfg, 1.0, &mut scratch)?;
            }
            Ok(total / n as f64)
        }
    }
}

/// Stage 2. The decoder is never modified. After every epoch the validation
/// SSE of the full encoder-decoder predictor is recorded and the best
/// bundle (the untrained one included) is returned.
pub fn train_encoder_stage(
    bundle: &ModelBundle,
    pairs: &InferencePairSet,
    valid: &TabularDataset,
    cfg: &TrainConfig,
) -> Result<StageOutcome> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyInput("inference pairs"));
    }
    ensure_len("inference pair latent width", bundle.latent_dim, pairs.latent_dim())?;
    let expected_head = match pairs.mode {
        MatchingMode::BatchMean => EncoderHead::Deterministic,
        MatchingMode::PerSampleSet => EncoderHead::Gaussian,
    };
    if bundle.head != expected_head {
        return Err(Error::InvalidConfig(format!(
            "{:?} matching needs a {:?} encoder head",
            pairs.mode, expected_head
        )));
    }
    let mut current = bundle.clone();
    let mut adam = AdamState::new(&current.encoder, cfg.encoder_lr);
    let mut best = BestTracker::new(&current, valid)?;
    let mut logs = Vec::with_capacity(cfg.epochs_inference);
    for epoch in 1..=cfg.epochs_inference {
        let mut loss = 0.0;
        let mut batches = 0usize;
        for batch in minibatches(pairs.len(), cfg.batch_size, cfg.seed, "encoder-batches", epoch) {
            let mut grads = MlpGradients::zeros_like(&current.encoder);
            match pairs.mode {
                MatchingMode::BatchMean => {
                    loss += batch_mean_step(&current, pairs, &batch, cfg, &mut grads)
                        .map_err(Error::during(format!("encoder stage epoch {epoch}")))?;
                }
                MatchingMode::PerSampleSet => {
                    let scale = 1.0 / batch.len() as f64;
                    let mut batch_loss = 0.0;
                    for &m in &batch {
                        let noise = standard_normal_draws(
                            &mut noise_stream(cfg, epoch, m),
                            pairs.latents[m].rows(),
                            current.latent_dim,
                        );
                        batch_loss += sample_set_step(&current, pairs.x.row(m), &pairs.latents[m], &noise, cfg, scale, &mut grads)
                            .map_err(Error::during(format!("encoder stage epoch {epoch}, sample {m}")))?;
                    }
                    loss += batch_loss * scale;
                }
            }
            batches += 1;
            adam_step(&mut current.encoder, &grads, &mut adam)
                .map_err(Error::during(format!("encoder stage epoch {epoch}")))?;
        }
        let sse = best.offer(&current, valid, epoch)?;
        logs.push(EpochLog {
            epoch,
            stage: Stage::Encoder,
            loss: loss / batches as f64,
            valid_sse: Some(sse),
        });
    }
    Ok(best.finish(current, logs))
}
