//! Finite-difference checks of every analytic gradient in the crate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::Serialize;

use crate::error::Result;
use crate::kernel::{rbf_grad_first, rbf_kernel};
use crate::numcore::gradcheck::{central_difference, max_relative_error};
use crate::numcore::{Activation, Matrix, MlpParams};
use crate::ot::{cost_matrix, entropic_objective, envelope_grad_predictions, sinkhorn, SinkhornConfig};
use crate::rng::StreamRng;
use crate::score::{DecoderPosterior, FlatTarget, Gaussian, GaussianMixture1D, ScoreModel, StandardNormalPrior};

/// Names accepted by [`GradCheckOptions::corrupt`], in report order.
pub const CHECK_NAMES: [&str; 9] = [
    "mlp_params",
    "mlp_input",
    "rbf_kernel",
    "score_gaussian",
    "score_standard_normal",
    "score_flat",
    "score_mixture_1d",
    "score_decoder_posterior",
    "envelope",
];

const TOLERANCE: f64 = 1e-4;
const ENVELOPE_TOLERANCE: f64 = 1e-3;
const STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub instances: usize,
    /// Perturbs the analytic gradient of the named check, to confirm the
    /// suite can fail.
    pub corrupt: Option<String>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 20,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheck {
    pub name: String,
    pub instances: usize,
    pub max_relative_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn normal_vec(rng: &mut StreamRng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect()
}

fn random_mlp(rng: &mut StreamRng) -> Result<MlpParams<f64>> {
    let hidden = rng.random_range(2..6);
    MlpParams::random(&[3, hidden, 4, 2], Activation::Tanh, rng)
}

fn score_error<S: ScoreModel<f64>>(model: &S, z: &[f64], corrupt: bool) -> Result<f64> {
    let mut analytic = model.score(z)?;
    if corrupt {
        analytic[0] += 0.1;
    }
    let numeric = central_difference(|p| model.log_density(p).expect("dimension fixed"), z, STEP);
    Ok(max_relative_error(&analytic, &numeric))
}

/// One instance of the named check; returns its max relative error.
fn instance(name: &str, rng: &mut StreamRng, corrupt: bool) -> Result<f64> {
    let bump = |v: &mut Vec<f64>| {
        if corrupt {
            v[0] += 0.1;
        }
    };
    match name {
        "mlp_params" => {
            let mlp = random_mlp(rng)?;
            let x = normal_vec(rng, 3);
            let w = normal_vec(rng, 2);
            let (_, cache) = mlp.forward(&x)?;
            let mut analytic = mlp.backward_params(&cache, &w)?.flatten();
            bump(&mut analytic);
            let numeric = central_difference(
                |p| {
                    let mut m = mlp.clone();
                    m.set_flat_params(p).expect("same length");
                    let out = m.predict(&x).expect("shape fixed");
                    out.iter().zip(&w).map(|(o, w)| o * w).sum()
                },
                &mlp.flat_params(),
                STEP,
            );
            Ok(max_relative_error(&analytic, &numeric))
        }
        "mlp_input" => {
            let mlp = random_mlp(rng)?;
            let x = normal_vec(rng, 3);
            let w = normal_vec(rng, 2);
            let (_, cache) = mlp.forward(&x)?;
            let mut analytic = mlp.backward_input(&cache, &w)?;
            bump(&mut analytic);
            let numeric = central_difference(
                |p| {
                    let out = mlp.predict(p).expect("shape fixed");
                    out.iter().zip(&w).map(|(o, w)| o * w).sum()
                },
                &x,
                STEP,
            );
            Ok(max_relative_error(&analytic, &numeric))
        }
        "rbf_kernel" => {
            let h = rng.random_range(0.5..2.0);
            let a = normal_vec(rng, 3);
            let b = normal_vec(rng, 3);
            let mut analytic = rbf_grad_first(&a, &b, h)?;
            bump(&mut analytic);
            let numeric = central_difference(|p| rbf_kernel(p, &b, h).expect("shape fixed"), &a, STEP);
            Ok(max_relative_error(&analytic, &numeric))
        }
        "score_gaussian" => {
            let mean = normal_vec(rng, 3);
            let var: Vec<f64> = (0..3).map(|_| rng.random_range(0.2..3.0)).collect();
            score_error(&Gaussian::new(mean, var)?, &normal_vec(rng, 3), corrupt)
        }
        "score_standard_normal" => score_error(&StandardNormalPrior { dim: 4 }, &normal_vec(rng, 4), corrupt),
        "score_flat" => score_error(&FlatTarget { dim: 2 }, &normal_vec(rng, 2), corrupt),
        "score_mixture_1d" => {
            let k = rng.random_range(1..4);
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let weights = raw.iter().map(|w| w / total).collect();
            let means = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let stds = (0..k).map(|_| rng.random_range(0.3..1.5)).collect();
            let model = GaussianMixture1D::new(weights, means, stds)?;
            let z = [Uniform::new(-4.0, 4.0).expect("valid range").sample(&mut *rng)];
            score_error(&model, &z, corrupt)
        }
        "score_decoder_posterior" => {
            let decoder = MlpParams::random(&[2, 5, 4], Activation::Tanh, rng)?;
            let x = normal_vec(rng, 3);
            let y: f64 = StandardNormal.sample(&mut *rng);
            let noise_var = rng.random_range(0.1..2.0);
            let model = DecoderPosterior::new(&decoder, &x, y, noise_var)?;
            score_error(&model, &normal_vec(rng, 2), corrupt)
        }
        "envelope" => {
            let n = rng.random_range(3..7);
            let targets = Matrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut *rng));
            let preds = Matrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut *rng));
            let eps = 0.5;
            let cfg = SinkhornConfig {
                marginal_tol: 1e-13,
                max_iters: 100_000,
                ..SinkhornConfig::with_eps(eps)
            };
            let value = |p: &[f64]| {
                let m = Matrix::from_vec(n, 2, p.to_vec()).expect("shape fixed");
                let cost = cost_matrix(&targets, &m).expect("shape fixed");
                let plan = sinkhorn(&cost, &cfg).expect("well-posed instance");
                entropic_objective(&plan, &cost, eps).expect("shape fixed")
            };
            let cost = cost_matrix(&targets, &preds)?;
            let plan = sinkhorn(&cost, &cfg)?;
            let mut analytic = envelope_grad_predictions(&plan, &targets, &preds)?.as_slice().to_vec();
            bump(&mut analytic);
            let numeric = central_difference(value, preds.as_slice(), STEP);
            Ok(max_relative_error(&analytic, &numeric))
        }
        other => unreachable!("unknown check {other}"),
    }
}

/// Runs every check on `instances` random instances each.
pub fn gradient_suite(opts: &GradCheckOptions) -> Result<Vec<GradCheck>> {
    CHECK_NAMES
        .iter()
        .map(|&name| {
            let mut rng = crate::rng::stream(opts.seed, name, 0);
            let corrupt = opts.corrupt.as_deref() == Some(name);
            let mut worst = 0.0f64;
            for _ in 0..opts.instances {
                let e = instance(name, &mut rng, corrupt)?;
                worst = if e.is_nan() { f64::INFINITY } else { worst.max(e) };
            }
            let tolerance = if name == "envelope" { ENVELOPE_TOLERANCE } else { TOLERANCE };
            Ok(GradCheck {
                name: name.to_string(),
                instances: opts.instances,
                max_relative_error: worst,
                tolerance,
                passed: opts.instances > 0 && worst <= tolerance,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let report = gradient_suite(&GradCheckOptions::default()).unwrap();
        assert_eq!(report.len(), CHECK_NAMES.len());
        for c in &report {
            assert!(c.passed, "{c:?}");
        }
    }

    #[test]
    fn corruption_is_detected() {
        for name in CHECK_NAMES {
            let opts = GradCheckOptions {
                instances: 3,
                corrupt: Some(name.to_string()),
                ..GradCheckOptions::default()
            };
            let report = gradient_suite(&opts).unwrap();
            for c in report {
                assert_eq!(c.passed, c.name != name, "{c:?}");
            }
        }
    }
}
