//! Particle approximation of a symmetric bimodal 1-D target, tracked by the
//! exact W₂ distance to a large reference sample.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernel::KernelConfig;
use crate::metrics::mode_masses;
use crate::ot::wasserstein2_1d_exact;
use crate::sampler::{init_ensemble_with, kprox_run, InitDistribution, InitSpec, KproxConfig, KproxRun, StepSchedule};
use crate::score::GaussianMixture1D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BimodalDemoConfig {
    pub particles: usize,
    pub epsilon: f64,
    pub steps: usize,
    pub record_every: usize,
    pub reference_samples: usize,
    /// Modes sit at `±mode_offset`.
    pub mode_offset: f64,
    pub mode_std: f64,
    pub kernel: KernelConfig<f64>,
    pub seed: u64,
}

impl Default for BimodalDemoConfig {
    fn default() -> Self {
        Self {
            particles: 500,
            epsilon: 0.1,
            steps: 200,
            record_every: 10,
            reference_samples: 100_000,
            mode_offset: 2.0,
            mode_std: 0.5,
            kernel: KernelConfig::default(),
            seed: 0,
        }
    }
}

/// The two starting distributions of the demo: `N(0, 1)` and `U(-0.5, 0.5)`.
pub fn demo_inits() -> [(&'static str, InitDistribution<f64>); 2] {
    [
        ("gaussian", InitDistribution::Gaussian { mean: 0.0, std: 1.0 }),
        ("uniform", InitDistribution::Uniform { lo: -0.5, hi: 0.5 }),
    ]
}

#[derive(Debug, Clone)]
pub struct BimodalDemo {
    pub run: KproxRun<f64>,
    /// `(step, W₂ to the reference)` for every recorded snapshot.
    pub w2_curve: Vec<(usize, f64)>,
    /// Fraction of final particles below and above zero.
    pub final_masses: (f64, f64),
}

impl BimodalDemo {
    pub fn initial_w2(&self) -> f64 {
        self.w2_curve.first().map_or(f64::NAN, |p| p.1)
    }

    pub fn final_w2(&self) -> f64 {
        self.w2_curve.last().map_or(f64::NAN, |p| p.1)
    }
}

pub fn bimodal_target(cfg: &BimodalDemoConfig) -> Result<GaussianMixture1D<f64>> {
    GaussianMixture1D::symmetric_bimodal(cfg.mode_offset, cfg.mode_std)
}

/// Exact draws from the target; the same for every init.
pub fn reference_sample(cfg: &BimodalDemoConfig) -> Result<Vec<f64>> {
    let target = bimodal_target(cfg)?;
    Ok(target.sample(cfg.reference_samples, &mut crate::rng::stream(cfg.seed, "demo-reference", 0)))
}

pub fn run_bimodal_demo(
    cfg: &BimodalDemoConfig,
    init: InitDistribution<f64>,
    reference: &[f64],
) -> Result<BimodalDemo> {
    let target = bimodal_target(cfg)?;
    let spec = InitSpec {
        distribution: init,
        dim: 1,
        count: cfg.particles,
    };
    let start = init_ensemble_with(&spec, &mut crate::rng::stream(cfg.seed, "demo-init", 0))?;
    let kcfg = KproxConfig {
        epsilon: cfg.epsilon,
        steps: cfg.steps,
        schedule: StepSchedule::Constant,
        kernel: cfg.kernel,
        seed: cfg.seed,
    };
    let run = kprox_run(start, &target, &kcfg, cfg.record_every.max(1))?;
    let w2_curve = run
        .trajectory
        .iter()
        .map(|s| Ok((s.step, wasserstein2_1d_exact(s.particles.as_slice(), reference)?)))
        .collect::<Result<Vec<_>>>()?;
    let final_masses = mode_masses(run.final_ensemble.particles().as_slice(), 0.0)?;
    Ok(BimodalDemo {
        run,
        w2_curve,
        final_masses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> BimodalDemoConfig {
        BimodalDemoConfig {
            particles: 100,
            reference_samples: 5000,
            ..BimodalDemoConfig::default()
        }
    }

    #[test]
    fn zero_step_size_keeps_w2_constant() {
        let cfg = BimodalDemoConfig { epsilon: 0.0, ..small() };
        let reference = reference_sample(&cfg).unwrap();
        let demo = run_bimodal_demo(&cfg, demo_inits()[0].1, &reference).unwrap();
        assert_eq!(demo.w2_curve.len(), 21);
        assert!(demo.w2_curve.iter().all(|p| p.1 == demo.initial_w2()));
    }

    #[test]
    fn deterministic() {
        let cfg = small();
        let reference = reference_sample(&cfg).unwrap();
        let a = run_bimodal_demo(&cfg, demo_inits()[1].1, &reference).unwrap();
        let b = run_bimodal_demo(&cfg, demo_inits()[1].1, &reference).unwrap();
        assert_eq!(a.w2_curve, b.w2_curve);
        assert_eq!(a.run.final_ensemble, b.run.final_ensemble);
    }
}
