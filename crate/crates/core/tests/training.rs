use std::sync::OnceLock;

use kprox::data::{make_toy_regression, SplitSpec, Standardizer, TabularDataset};
use kprox::numcore::Activation;
use kprox::sampler::{InitSpec, init_ensemble};
use kprox::train::{
    build_inference_pairs, fit, infer_latents, train_decoder_stage, train_encoder_stage, Ablation, FitOutcome,
    LatentCache, MatchingMode, ModelBundle, Splits, TrainConfig,
};

fn toy_splits() -> Splits {
    Splits::chronological(&make_toy_regression(0, 500).unwrap(), &SplitSpec::default()).unwrap()
}

fn scaled(splits: &Splits) -> (Standardizer, TabularDataset, TabularDataset) {
    let s = Standardizer::fit(&splits.train).unwrap();
    let train = s.apply(&splits.train).unwrap();
    let valid = s.apply(&splits.valid).unwrap();
    (s, train, valid)
}

fn desk(ablation: Ablation) -> TrainConfig {
    TrainConfig {
        ablation,
        ..TrainConfig::preset("desk").unwrap()
    }
}

fn desk_full() -> &'static FitOutcome {
    static OUT: OnceLock<FitOutcome> = OnceLock::new();
    OUT.get_or_init(|| fit(&toy_splits(), &desk(Ablation::Full)).unwrap())
}

fn desk_no_kprox() -> &'static FitOutcome {
    static OUT: OnceLock<FitOutcome> = OnceLock::new();
    OUT.get_or_init(|| fit(&toy_splits(), &desk(Ablation::NoKprox)).unwrap())
}

#[test]
fn decoder_nll_decreases_over_five_epochs() {
    let splits = toy_splits();
    let (s, train, _) = scaled(&splits);
    let cfg = TrainConfig {
        epochs_generative: 5,
        kprox_steps: 50,
        particles: 5,
        ..TrainConfig::default()
    };
    let mut bundle = ModelBundle::init(&cfg, train.n_features(), s).unwrap();
    let mut cache = LatentCache::new(train.len());
    let logs = train_decoder_stage(&mut bundle, &train, &cfg, &mut cache).unwrap();
    assert_eq!(logs.len(), 5);
    assert!(logs[4].loss < logs[0].loss, "{:?}", logs.iter().map(|l| l.loss).collect::<Vec<_>>());
}

/// Log posterior of a 1-D latent under a Gaussian decoder likelihood and a
/// standard normal prior, maximized on a fine grid.
fn grid_mode(decoder: &kprox::numcore::MlpParams<f64>, target: &[f64], noise_var: f64) -> f64 {
    let log_post = |z: f64| {
        let out = decoder.predict(&[z]).unwrap();
        let sq: f64 = out.iter().zip(target).map(|(o, t)| (o - t) * (o - t)).sum();
        -0.5 * sq / noise_var - 0.5 * z * z
    };
    (0..=80_000)
        .map(|i| -4.0 + 1e-4 * i as f64)
        .fold((f64::NAN, f64::NEG_INFINITY), |(bz, bv), z| {
            let v = log_post(z);
            if v > bv {
                (z, v)
            } else {
                (bz, bv)
            }
        })
        .0
}

#[test]
fn sharp_posterior_particles_sit_at_the_mode() {
    let splits = toy_splits();
    let (s, train, _) = scaled(&splits);
    let cfg = TrainConfig {
        latent_dim: 1,
        hidden: vec![6],
        activation: Activation::Tanh,
        noise_var: 0.01,
        kprox_epsilon: 1e-3,
        kprox_steps: 3000,
        particles: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let bundle = ModelBundle::init(&cfg, train.n_features(), s).unwrap();
    for m in [0, 7, 42] {
        let (x, y) = train.row(m);
        let mut target = x.to_vec();
        target.push(y);
        let mode = grid_mode(&bundle.decoder, &target, cfg.noise_var);
        let init = init_ensemble(&InitSpec::standard_normal(1, cfg.particles), m as u64).unwrap();
        let post = infer_latents(&bundle.decoder, x, y, init, &cfg).unwrap();
        let mean = post.mean()[0];
        assert!((mean - mode).abs() < 0.05, "sample {m}: mean {mean}, mode {mode}");
    }
}

#[test]
fn batch_mean_transport_loss_halves() {
    let cfg = TrainConfig {
        matching_mode: MatchingMode::BatchMean,
        ..TrainConfig::preset("smoke").unwrap()
    };
    let out = fit(&toy_splits(), &cfg).unwrap();
    let (start, end) = (out.transport_initial.unwrap(), out.transport_final.unwrap());
    assert!(end < 0.5 * start, "transport loss {start} -> {end}");
}

#[test]
fn encoder_stage_keeps_decoder_and_selects_best() {
    let splits = toy_splits();
    let (s, train, valid) = scaled(&splits);
    let cfg = TrainConfig {
        epochs_generative: 2,
        epochs_inference: 6,
        kprox_steps: 30,
        particles: 5,
        batch_size: 64,
        ..TrainConfig::default()
    };
    let mut bundle = ModelBundle::init(&cfg, train.n_features(), s).unwrap();
    let mut cache = LatentCache::new(train.len());
    train_decoder_stage(&mut bundle, &train, &cfg, &mut cache).unwrap();
    let pairs = build_inference_pairs(&bundle, &train, &cfg, &cache, cfg.matching_mode).unwrap();
    let out = train_encoder_stage(&bundle, &pairs, &valid, &cfg).unwrap();
    assert_eq!(out.best.decoder, bundle.decoder);
    assert_eq!(out.last.decoder, bundle.decoder);
    assert_eq!(out.best_valid_sse, out.best.sse(&valid).unwrap());
    assert!(out.best_valid_sse <= bundle.sse(&valid).unwrap());
    for log in &out.logs {
        assert!(out.best_valid_sse <= log.valid_sse.unwrap());
    }
}

/// Euclidean distance moved by the encoder parameters in one Adam step.
fn first_step_displacement(lr: f64) -> f64 {
    let splits = toy_splits();
    let (s, train, valid) = scaled(&splits);
    let cfg = TrainConfig {
        matching_mode: MatchingMode::BatchMean,
        epochs_generative: 1,
        epochs_inference: 1,
        kprox_steps: 20,
        particles: 5,
        batch_size: train.len(),
        encoder_lr: lr,
        ..TrainConfig::default()
    };
    let mut bundle = ModelBundle::init(&cfg, train.n_features(), s).unwrap();
    let mut cache = LatentCache::new(train.len());
    train_decoder_stage(&mut bundle, &train, &cfg, &mut cache).unwrap();
    let pairs = build_inference_pairs(&bundle, &train, &cfg, &cache, cfg.matching_mode).unwrap();
    let out = train_encoder_stage(&bundle, &pairs, &valid, &cfg).unwrap();
    let before = bundle.encoder.flat_params();
    let after = out.last.encoder.flat_params();
    before.iter().zip(&after).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

#[test]
fn halving_encoder_lr_halves_first_step() {
    let full = first_step_displacement(1e-4);
    let half = first_step_displacement(5e-5);
    assert!(full > 0.0);
    let ratio = half / full;
    assert!((ratio - 0.5).abs() <= 0.05 * 0.5, "ratio {ratio}");
}

#[test]
fn toy_full_model_explains_label() {
    let out = desk_full();
    assert!(out.test_standardized.r2 > 0.8, "R2 {}", out.test_standardized.r2);
    let (start, end) = (out.transport_initial.unwrap(), out.transport_final.unwrap());
    assert!(end < start, "transport loss {start} -> {end}");
}

/// The transport-fitted encoder is expected to match or beat the VAE
/// trained with the same seed and budget.
#[test]
fn toy_full_model_not_worse_than_vae() {
    let (full, vae) = (desk_full(), desk_no_kprox());
    assert!(
        full.test_standardized.r2 >= vae.test_standardized.r2,
        "full R2 {} < vae R2 {}",
        full.test_standardized.r2,
        vae.test_standardized.r2
    );
}

#[test]
fn kl_encoder_ablation_completes() {
    let cfg = TrainConfig {
        ablation: Ablation::NoWass,
        ..TrainConfig::preset("smoke").unwrap()
    };
    let out = fit(&toy_splits(), &cfg).unwrap();
    let m = &out.test_standardized;
    assert!(m.r2.is_finite() && m.rmse.is_finite() && m.mae.is_finite());
    assert!(out.transport_initial.is_none());
}
